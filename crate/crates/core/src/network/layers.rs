//! Layer kernels with their backward passes.
//!
//! Every function here is pure; caches needed by a backward pass are returned by
//! the matching forward pass.

use crate::tensor::{Matrix, Tensor3};

use super::NetworkError;

/// Batch-norm variance epsilon.
pub const BN_EPS: f64 = 1e-5;

pub fn conv_output_dim(input: usize, kernel: usize, stride: usize) -> Option<usize> {
    if input < kernel || stride == 0 {
        None
    } else {
        Some((input - kernel) / stride + 1)
    }
}

/// Unrolls receptive fields into columns.
///
/// Row `(c·kh + i)·kw + j` and column `oy·out_w + ox` hold
/// `x[c, oy·sh + i, ox·sw + j]`, so a convolution is `filters × im2col(x)` with
/// filters stored as `F × (C·kh·kw)`.
pub fn im2col(x: &Tensor3, kernel: (usize, usize), stride: (usize, usize)) -> Result<Matrix, NetworkError> {
    let (kh, kw) = kernel;
    let (sh, sw) = stride;
    let (oh, ow) = match (conv_output_dim(x.height, kh, sh), conv_output_dim(x.width, kw, sw)) {
        (Some(h), Some(w)) => (h, w),
        _ => {
            return Err(NetworkError::InvalidSpec(format!(
                "kernel {kh}x{kw} does not fit input {}x{}",
                x.height, x.width
            )))
        }
    };
    let positions = oh * ow;
    let mut cols = Matrix::zeros(x.channels * kh * kw, positions);
    for c in 0..x.channels {
        for i in 0..kh {
            for j in 0..kw {
                let row = (c * kh + i) * kw + j;
                let dst = &mut cols.data[row * positions..(row + 1) * positions];
                for oy in 0..oh {
                    let src = x.index(c, oy * sh + i, j);
                    for ox in 0..ow {
                        dst[oy * ow + ox] = x.data[src + ox * sw];
                    }
                }
            }
        }
    }
    Ok(cols)
}

/// Adjoint of [`im2col`]: scatters column gradients back onto the input grid.
pub fn col2im(cols: &Matrix, shape: (usize, usize, usize), kernel: (usize, usize), stride: (usize, usize)) -> Tensor3 {
    let (channels, height, width) = shape;
    let (kh, kw) = kernel;
    let (sh, sw) = stride;
    let oh = (height - kh) / sh + 1;
    let ow = (width - kw) / sw + 1;
    let positions = oh * ow;
    let mut x = Tensor3::zeros(channels, height, width);
    for c in 0..channels {
        for i in 0..kh {
            for j in 0..kw {
                let row = (c * kh + i) * kw + j;
                let src = &cols.data[row * positions..(row + 1) * positions];
                for oy in 0..oh {
                    let dst = x.index(c, oy * sh + i, j);
                    for ox in 0..ow {
                        x.data[dst + ox * sw] += src[oy * ow + ox];
                    }
                }
            }
        }
    }
    x
}

/// Bias-free, unpadded convolution. Returns the output and the im2col cache.
pub fn conv_forward(
    x: &Tensor3,
    filters: &Matrix,
    kernel: usize,
    stride: usize,
) -> Result<(Tensor3, Matrix), NetworkError> {
    let cols = im2col(x, (kernel, kernel), (stride, stride))?;
    if filters.cols != cols.rows {
        return Err(NetworkError::ShapeMismatch {
            what: "convolution filters",
            expected: format!("{} inputs", cols.rows),
            got: format!("{}", filters.cols),
        });
    }
    let oh = (x.height - kernel) / stride + 1;
    let ow = (x.width - kernel) / stride + 1;
    let out = filters.matmul(&cols);
    Ok((Tensor3::from_vec(filters.rows, oh, ow, out.data), cols))
}

/// Returns `(d_filters, d_input)` for an output gradient.
pub fn conv_backward(
    dout: &Tensor3,
    cols: &Matrix,
    filters: &Matrix,
    input_shape: (usize, usize, usize),
    kernel: usize,
    stride: usize,
) -> (Matrix, Tensor3) {
    let positions = dout.height * dout.width;
    let dz = Matrix::from_vec(dout.channels, positions, dout.data.clone());
    let dw = conv_filter_grad(dout, cols, filters);
    // dcols = Wᵀ · dZ
    let dcols = filters.transpose().matmul(&dz);
    let dx = col2im(&dcols, input_shape, (kernel, kernel), (stride, stride));
    (dw, dx)
}

/// Filter gradient only: `dW = dZ · colsᵀ`.
pub fn conv_filter_grad(dout: &Tensor3, cols: &Matrix, filters: &Matrix) -> Matrix {
    let positions = dout.height * dout.width;
    let mut dw = Matrix::zeros(filters.rows, filters.cols);
    for f in 0..filters.rows {
        let dz_row = &dout.data[f * positions..(f + 1) * positions];
        for k in 0..filters.cols {
            let col_row = cols.row(k);
            dw.data[f * filters.cols + k] = dz_row.iter().zip(col_row).map(|(a, b)| a * b).sum();
        }
    }
    dw
}

/// Non-overlapping max pooling with floor semantics. Also returns the flat input
/// index of each selected maximum (first maximum on ties).
pub fn maxpool_forward(x: &Tensor3, size: usize) -> (Tensor3, Vec<usize>) {
    let oh = x.height / size;
    let ow = x.width / size;
    let mut out = Tensor3::zeros(x.channels, oh, ow);
    let mut arg = vec![0usize; x.channels * oh * ow];
    for c in 0..x.channels {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = f64::NEG_INFINITY;
                let mut best_i = x.index(c, oy * size, ox * size);
                for i in 0..size {
                    for j in 0..size {
                        let idx = x.index(c, oy * size + i, ox * size + j);
                        if x.data[idx] > best {
                            best = x.data[idx];
                            best_i = idx;
                        }
                    }
                }
                let o = out.index(c, oy, ox);
                out.data[o] = best;
                arg[o] = best_i;
            }
        }
    }
    (out, arg)
}

pub fn maxpool_backward(dout: &Tensor3, argmax: &[usize], input_shape: (usize, usize, usize)) -> Tensor3 {
    let (c, h, w) = input_shape;
    let mut dx = Tensor3::zeros(c, h, w);
    for (g, &i) in dout.data.iter().zip(argmax) {
        dx.data[i] += g;
    }
    dx
}

pub fn relu_inplace(values: &mut [f64]) {
    for v in values {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// Gradient of ReLU given its output activations.
pub fn relu_backward_inplace(grad: &mut [f64], activated: &[f64]) {
    for (g, &a) in grad.iter_mut().zip(activated) {
        if a <= 0.0 {
            *g = 0.0;
        }
    }
}

/// Batch-norm parameters and running statistics for one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub gain: Vec<f64>,
    pub bias: Vec<f64>,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl BatchNorm {
    pub fn identity(channels: usize) -> Self {
        Self {
            gain: vec![1.0; channels],
            bias: vec![0.0; channels],
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
        }
    }

    pub fn channels(&self) -> usize {
        self.gain.len()
    }

    /// Per-channel `(scale, shift)` of the inference-time affine map.
    pub fn affine(&self) -> Vec<(f64, f64)> {
        (0..self.channels())
            .map(|c| {
                let scale = self.gain[c] / (self.var[c] + BN_EPS).sqrt();
                (scale, self.bias[c] - self.mean[c] * scale)
            })
            .collect()
    }

    /// Inference: `gain·(x − mean)/sqrt(var + eps) + bias` over channel-major data
    /// with `stride` values per channel.
    pub fn apply_inference(&self, data: &mut [f64], stride: usize) {
        for (c, (scale, shift)) in self.affine().into_iter().enumerate() {
            for v in &mut data[c * stride..(c + 1) * stride] {
                *v = *v * scale + shift;
            }
        }
    }
}

/// Cache of a training-mode batch-norm forward pass.
#[derive(Debug, Clone)]
pub struct BatchNormCache {
    /// Normalised activations, same layout as the inputs.
    pub normalized: Vec<Vec<f64>>,
    pub inv_std: Vec<f64>,
    pub batch_mean: Vec<f64>,
    pub batch_var: Vec<f64>,
    pub stride: usize,
}

/// Training-mode batch norm over a batch of channel-major samples, each holding
/// `channels × stride` values. Statistics are taken over the batch and the
/// `stride` positions of every channel.
pub fn batchnorm_train_forward(samples: &[Vec<f64>], bn: &BatchNorm, stride: usize) -> (Vec<Vec<f64>>, BatchNormCache) {
    let channels = bn.channels();
    let count = (samples.len() * stride) as f64;
    let mut mean = vec![0.0; channels];
    let mut var = vec![0.0; channels];
    for s in samples {
        for c in 0..channels {
            mean[c] += s[c * stride..(c + 1) * stride].iter().sum::<f64>();
        }
    }
    for m in &mut mean {
        *m /= count;
    }
    for s in samples {
        for c in 0..channels {
            var[c] += s[c * stride..(c + 1) * stride]
                .iter()
                .map(|v| (v - mean[c]).powi(2))
                .sum::<f64>();
        }
    }
    for v in &mut var {
        *v /= count;
    }
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
    let mut normalized = Vec::with_capacity(samples.len());
    let mut outputs = Vec::with_capacity(samples.len());
    for s in samples {
        let mut n = vec![0.0; s.len()];
        let mut o = vec![0.0; s.len()];
        for c in 0..channels {
            for k in c * stride..(c + 1) * stride {
                n[k] = (s[k] - mean[c]) * inv_std[c];
                o[k] = bn.gain[c] * n[k] + bn.bias[c];
            }
        }
        normalized.push(n);
        outputs.push(o);
    }
    (
        outputs,
        BatchNormCache {
            normalized,
            inv_std,
            batch_mean: mean,
            batch_var: var,
            stride,
        },
    )
}

/// Returns `(d_inputs, d_gain, d_bias)`.
pub fn batchnorm_backward(
    dout: &[Vec<f64>],
    cache: &BatchNormCache,
    bn: &BatchNorm,
) -> (Vec<Vec<f64>>, Vec<f64>, Vec<f64>) {
    let channels = bn.channels();
    let stride = cache.stride;
    let count = (dout.len() * stride) as f64;
    let mut dgain = vec![0.0; channels];
    let mut dbias = vec![0.0; channels];
    for (d, n) in dout.iter().zip(&cache.normalized) {
        for c in 0..channels {
            for k in c * stride..(c + 1) * stride {
                dgain[c] += d[k] * n[k];
                dbias[c] += d[k];
            }
        }
    }
    // With dx̂ = dy·γ: dx = inv_std/M · (M·dx̂ − Σdx̂ − x̂·Σ(dx̂·x̂)).
    let dx = dout
        .iter()
        .zip(&cache.normalized)
        .map(|(d, n)| {
            let mut out = vec![0.0; d.len()];
            for c in 0..channels {
                let sum_dxhat = bn.gain[c] * dbias[c];
                let sum_dxhat_xhat = bn.gain[c] * dgain[c];
                for k in c * stride..(c + 1) * stride {
                    let dxhat = d[k] * bn.gain[c];
                    out[k] = cache.inv_std[c] / count * (count * dxhat - sum_dxhat - n[k] * sum_dxhat_xhat);
                }
            }
            out
        })
        .collect();
    (dx, dgain, dbias)
}

/// Numerically stable softmax over two or more logits.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    logits.iter().map(|l| l - lse).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn im2col_hand_enumeration() {
        let x = Tensor3::from_vec(1, 3, 3, (1..=9).map(f64::from).collect());
        let cols = im2col(&x, (2, 2), (1, 1)).unwrap();
        assert_eq!((cols.rows, cols.cols), (4, 4));
        let col = |j: usize| (0..4).map(|r| cols.get(r, j)).collect::<Vec<_>>();
        assert_eq!(col(0), vec![1.0, 2.0, 4.0, 5.0]);
        assert_eq!(col(1), vec![2.0, 3.0, 5.0, 6.0]);
        assert_eq!(col(2), vec![4.0, 5.0, 7.0, 8.0]);
        assert_eq!(col(3), vec![5.0, 6.0, 8.0, 9.0]);
    }

    #[test]
    fn im2col_full_kernel_is_flatten() {
        let x = Tensor3::from_vec(2, 2, 3, (0..12).map(f64::from).collect());
        let cols = im2col(&x, (2, 3), (1, 1)).unwrap();
        assert_eq!(cols.cols, 1);
        assert_eq!(cols.data, x.data);
        assert!(im2col(&x, (3, 3), (1, 1)).is_err());
    }

    #[test]
    fn pool_floor_and_argmax() {
        let x = Tensor3::from_vec(1, 3, 5, (0..15).map(f64::from).collect());
        let (out, arg) = maxpool_forward(&x, 2);
        assert_eq!(out.shape(), (1, 1, 2));
        assert_eq!(out.data, vec![6.0, 8.0]);
        assert_eq!(arg, vec![6, 8]);
    }

    #[test]
    fn batchnorm_identity_inference() {
        let bn = BatchNorm::identity(2);
        let mut v = vec![1.5, -2.0, 3.0, 0.25];
        let orig = v.clone();
        bn.apply_inference(&mut v, 2);
        for (a, b) in v.iter().zip(&orig) {
            let expected = b / (1.0 + BN_EPS).sqrt();
            assert!((a - expected).abs() <= 1e-15 * expected.abs());
        }
    }

    #[test]
    fn softmax_sums_to_one() {
        for logits in [[0.0, 0.0], [1000.0, -1000.0], [3.5, 1.25]] {
            let p = softmax(&logits);
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let lp = log_softmax(&logits);
            for (a, b) in p.iter().zip(&lp) {
                assert!((a.ln() - b).abs() < 1e-9 || *a == 0.0);
            }
        }
        assert_eq!(softmax(&[0.0, 0.0]), vec![0.5, 0.5]);
    }
}
