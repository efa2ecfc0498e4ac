//! The spectrogram CNN.
//!
//! Architecture, with `n` electrodes and `p` time frames over 114 frequency bins:
//!
//! | layer | output |
//! |---|---|
//! | conv 16 @ 5×5, stride 2 | 16 × ⌊(p−5)/2⌋+1 × 55 |
//! | max-pool 2×2 | 16 × … × 27 |
//! | conv 32 @ 3×3 | 32 × … × 25 |
//! | max-pool 2×2 | 32 × … × 12 |
//! | conv 64 @ 3×3 | 64 × … × 10 |
//! | max-pool 2×2 | 64 × … × 5 |
//! | dense 256 | 256 |
//! | dense 2 | 2 |
//!
//! Every convolution and the first dense layer are followed by batch norm and
//! ReLU; convolutions carry no bias. The output goes through softmax.

mod backprop;
mod container;
pub mod layers;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crossbar::{self, CrossbarError, MappedLayer, TileConfig, WeightScheme};
use crate::device::DeviceParameters;
use crate::tensor::{Matrix, Tensor3};

pub use backprop::{loss_and_gradients, BatchOutcome};
pub use container::{load_weights, save_weights, ContainerError};
pub use layers::BatchNorm;

/// Frequency bins of every spectrogram window.
pub const FREQ_BINS: usize = 114;
pub const POOL_SIZE: usize = 2;
pub const FC1_UNITS: usize = 256;
pub const CLASSES: usize = 2;

/// One convolution stage (conv → batch norm → ReLU → max-pool).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvDef {
    pub filters: usize,
    pub kernel: usize,
    pub stride: usize,
}

pub const CONV_STAGES: [ConvDef; 3] = [
    ConvDef {
        filters: 16,
        kernel: 5,
        stride: 2,
    },
    ConvDef {
        filters: 32,
        kernel: 3,
        stride: 1,
    },
    ConvDef {
        filters: 64,
        kernel: 3,
        stride: 1,
    },
];

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error("invalid network spec: {0}")]
    InvalidSpec(String),
    #[error("{what}: expected {expected}, got {got}")]
    ShapeMismatch {
        what: &'static str,
        expected: String,
        got: String,
    },
    #[error(transparent)]
    Crossbar(#[from] CrossbarError),
}

/// Input geometry of the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    /// Electrode count `n`.
    pub channels: usize,
    /// Time frames `p`.
    pub frames: usize,
    pub freq_bins: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Conv(ConvDef),
    MaxPool,
    Dense,
}

/// Output geometry of one layer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerShape {
    pub name: &'static str,
    pub kind: LayerKind,
    /// `(channels, height, width)`; dense layers report `(units, 1, 1)`.
    pub output: (usize, usize, usize),
    /// Fan-in and fan-out of the weight matrix (conv and dense only).
    pub fan_in: usize,
    pub fan_out: usize,
}

/// A layer whose product runs on a crossbar.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LinearShape {
    pub name: &'static str,
    pub fan_in: usize,
    pub fan_out: usize,
    /// Output rows (conv) or 1 (dense).
    pub out_rows: usize,
    /// Output columns (conv) or 1 (dense).
    pub out_cols: usize,
}

const STAGE_NAMES: [(&str, &str); 3] = [("conv1", "pool1"), ("conv2", "pool2"), ("conv3", "pool3")];

impl NetworkSpec {
    pub fn new(channels: usize, frames: usize, freq_bins: usize) -> Result<Self, NetworkError> {
        let spec = Self {
            channels,
            frames,
            freq_bins,
        };
        spec.shapes()?;
        Ok(spec)
    }

    /// Spec for a window of `window_secs`: `p = t·f_s/k_s = 2t` with `k_s = f_s/2`.
    pub fn for_window(channels: usize, window_secs: usize) -> Result<Self, NetworkError> {
        Self::new(channels, 2 * window_secs, FREQ_BINS)
    }

    /// Per-layer output shapes with floor conv/pool arithmetic.
    pub fn shapes(&self) -> Result<Vec<LayerShape>, NetworkError> {
        if self.channels == 0 {
            return Err(NetworkError::InvalidSpec("channel count must be positive".into()));
        }
        let mut shapes = Vec::with_capacity(8);
        let (mut c, mut h, mut w) = (self.channels, self.frames, self.freq_bins);
        for (def, (conv_name, pool_name)) in CONV_STAGES.iter().zip(STAGE_NAMES) {
            let (oh, ow) = match (
                layers::conv_output_dim(h, def.kernel, def.stride),
                layers::conv_output_dim(w, def.kernel, def.stride),
            ) {
                (Some(oh), Some(ow)) => (oh, ow),
                _ => {
                    return Err(NetworkError::InvalidSpec(format!(
                        "{conv_name}: input {h}x{w} is smaller than its {k}x{k} kernel",
                        k = def.kernel
                    )))
                }
            };
            shapes.push(LayerShape {
                name: conv_name,
                kind: LayerKind::Conv(*def),
                output: (def.filters, oh, ow),
                fan_in: c * def.kernel * def.kernel,
                fan_out: def.filters,
            });
            let (ph, pw) = (oh / POOL_SIZE, ow / POOL_SIZE);
            if ph == 0 || pw == 0 {
                return Err(NetworkError::InvalidSpec(format!(
                    "{pool_name}: input {oh}x{ow} collapses below one element"
                )));
            }
            shapes.push(LayerShape {
                name: pool_name,
                kind: LayerKind::MaxPool,
                output: (def.filters, ph, pw),
                fan_in: 0,
                fan_out: 0,
            });
            (c, h, w) = (def.filters, ph, pw);
        }
        let flat = c * h * w;
        shapes.push(LayerShape {
            name: "fc1",
            kind: LayerKind::Dense,
            output: (FC1_UNITS, 1, 1),
            fan_in: flat,
            fan_out: FC1_UNITS,
        });
        shapes.push(LayerShape {
            name: "fc2",
            kind: LayerKind::Dense,
            output: (CLASSES, 1, 1),
            fan_in: FC1_UNITS,
            fan_out: CLASSES,
        });
        Ok(shapes)
    }

    /// The five conv/dense layers, in forward order.
    pub fn linear_layers(&self) -> Result<Vec<LinearShape>, NetworkError> {
        Ok(self
            .shapes()?
            .into_iter()
            .filter(|s| s.kind != LayerKind::MaxPool)
            .map(|s| {
                let (out_rows, out_cols) = match s.kind {
                    LayerKind::Conv(_) => (s.output.1, s.output.2),
                    _ => (1, 1),
                };
                LinearShape {
                    name: s.name,
                    fan_in: s.fan_in,
                    fan_out: s.fan_out,
                    out_rows,
                    out_cols,
                }
            })
            .collect())
    }

    /// Flattened size entering the first dense layer.
    pub fn flat_features(&self) -> Result<usize, NetworkError> {
        Ok(self.shapes()?[6].fan_in)
    }

    pub fn input_len(&self) -> usize {
        self.channels * self.frames * self.freq_bins
    }
}

/// Per-layer output shapes for `n` channels and `p` frames over 114 bins.
pub fn shapes(n: usize, p: usize) -> Result<Vec<LayerShape>, NetworkError> {
    NetworkSpec {
        channels: n,
        frames: p,
        freq_bins: FREQ_BINS,
    }
    .shapes()
}

/// Trained parameters of the network.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights {
    pub spec: NetworkSpec,
    /// Per-channel input standardisation applied before the first layer.
    pub input_mean: Vec<f64>,
    pub input_std: Vec<f64>,
    /// Convolution filters, `F × (C·k·k)` each.
    pub conv: Vec<Matrix>,
    pub conv_bn: Vec<BatchNorm>,
    /// `256 × flat`.
    pub fc1: Matrix,
    pub fc1_bn: BatchNorm,
    /// `2 × 256`.
    pub fc2: Matrix,
    pub fc2_bias: Vec<f64>,
}

impl LayerWeights {
    /// All-zero weights with identity batch norm and identity input scaling.
    pub fn zeros(spec: NetworkSpec) -> Result<Self, NetworkError> {
        let shapes = spec.linear_layers()?;
        Ok(Self {
            spec,
            input_mean: vec![0.0; spec.channels],
            input_std: vec![1.0; spec.channels],
            conv: shapes[..3].iter().map(|s| Matrix::zeros(s.fan_out, s.fan_in)).collect(),
            conv_bn: CONV_STAGES.iter().map(|d| BatchNorm::identity(d.filters)).collect(),
            fc1: Matrix::zeros(FC1_UNITS, shapes[3].fan_in),
            fc1_bn: BatchNorm::identity(FC1_UNITS),
            fc2: Matrix::zeros(CLASSES, FC1_UNITS),
            fc2_bias: vec![0.0; CLASSES],
        })
    }

    /// Kaiming-uniform weights (`U(±sqrt(6/fan_in))`), unit gain, zero biases.
    pub fn kaiming<R: rand::Rng + ?Sized>(spec: NetworkSpec, rng: &mut R) -> Result<Self, NetworkError> {
        let mut w = Self::zeros(spec)?;
        let fill = |m: &mut Matrix, rng: &mut R| {
            let bound = (6.0 / m.cols as f64).sqrt();
            for v in &mut m.data {
                *v = rng.random_range(-bound..bound);
            }
        };
        for m in &mut w.conv {
            fill(m, rng);
        }
        fill(&mut w.fc1, rng);
        fill(&mut w.fc2, rng);
        Ok(w)
    }

    /// Weight matrices in crossbar orientation (fan-in × fan-out), forward order.
    pub fn crossbar_matrices(&self) -> Vec<Matrix> {
        self.conv
            .iter()
            .chain([&self.fc1, &self.fc2])
            .map(Matrix::transpose)
            .collect()
    }

    /// Trainable tensors in a fixed order: conv filters, conv bn gain/bias, fc1,
    /// fc1 bn gain/bias, fc2, fc2 bias.
    pub fn trainable(&self) -> Vec<&[f64]> {
        let mut v: Vec<&[f64]> = Vec::new();
        for (m, bn) in self.conv.iter().zip(&self.conv_bn) {
            v.push(&m.data);
            v.push(&bn.gain);
            v.push(&bn.bias);
        }
        v.push(&self.fc1.data);
        v.push(&self.fc1_bn.gain);
        v.push(&self.fc1_bn.bias);
        v.push(&self.fc2.data);
        v.push(&self.fc2_bias);
        v
    }

    pub fn trainable_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v: Vec<&mut [f64]> = Vec::new();
        for (m, bn) in self.conv.iter_mut().zip(self.conv_bn.iter_mut()) {
            v.push(&mut m.data);
            v.push(&mut bn.gain);
            v.push(&mut bn.bias);
        }
        v.push(&mut self.fc1.data);
        v.push(&mut self.fc1_bn.gain);
        v.push(&mut self.fc1_bn.bias);
        v.push(&mut self.fc2.data);
        v.push(&mut self.fc2_bias);
        v
    }

    fn check_input(&self, x: &Tensor3) -> Result<(), NetworkError> {
        let want = (self.spec.channels, self.spec.frames, self.spec.freq_bins);
        if x.shape() != want {
            return Err(NetworkError::ShapeMismatch {
                what: "network input",
                expected: format!("{want:?}"),
                got: format!("{:?}", x.shape()),
            });
        }
        Ok(())
    }

    pub(crate) fn normalize_input(&self, x: &Tensor3) -> Tensor3 {
        let stride = x.height * x.width;
        let mut out = x.clone();
        for c in 0..x.channels {
            let (m, s) = (self.input_mean[c], self.input_std[c]);
            for v in &mut out.data[c * stride..(c + 1) * stride] {
                *v = (*v - m) / s;
            }
        }
        out
    }
}

/// Crossbar realisation of every conv/dense layer of a network.
#[derive(Debug, Clone, PartialEq)]
pub struct MappedNetwork {
    /// conv1, conv2, conv3, fc1, fc2.
    pub layers: Vec<MappedLayer>,
    /// Batch-norm scales folded into conv/fc1 columns; only the shift stays digital.
    pub folded_bn: bool,
}

/// Mixes a run seed with a layer index into an independent layer seed.
pub fn layer_seed(seed: u64, layer: u64) -> u64 {
    let mut z = seed ^ layer.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Options for mapping a whole network.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MappingOptions {
    pub scheme: WeightScheme,
    pub device: DeviceParameters,
    pub tile: TileConfig,
    pub read_voltage: f64,
    pub fold_batchnorm: bool,
}

impl Default for MappingOptions {
    fn default() -> Self {
        Self {
            scheme: WeightScheme::DoubleColumn,
            device: DeviceParameters::default(),
            tile: TileConfig::default(),
            read_voltage: crossbar::DEFAULT_READ_VOLTAGE,
            fold_batchnorm: false,
        }
    }
}

impl MappedNetwork {
    /// Maps all five layers with fresh devices; layer `i` uses `layer_seed(seed, i)`.
    pub fn map(weights: &LayerWeights, opts: &MappingOptions, seed: u64) -> Result<Self, NetworkError> {
        let mut matrices = weights.crossbar_matrices();
        if opts.fold_batchnorm {
            let bns = weights.conv_bn.iter().chain([&weights.fc1_bn]);
            for (m, bn) in matrices.iter_mut().zip(bns) {
                for (col, (scale, _)) in bn.affine().into_iter().enumerate() {
                    for r in 0..m.rows {
                        m.data[r * m.cols + col] *= scale;
                    }
                }
            }
        }
        let layers = matrices
            .iter()
            .enumerate()
            .map(|(i, m)| {
                crossbar::map_weights_with_voltage(
                    m,
                    opts.scheme,
                    &opts.device,
                    opts.tile,
                    layer_seed(seed, i as u64),
                    opts.read_voltage,
                )
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            layers,
            folded_bn: opts.fold_batchnorm,
        })
    }
}

/// Where the conv/dense products are computed.
#[derive(Debug, Clone, Copy)]
pub enum Backend<'a> {
    /// Exact floating-point products.
    Ideal,
    /// Crossbar VMMs through a mapped network.
    Memristive(&'a MappedNetwork),
}

impl Backend<'_> {
    /// `out[f, p] = Σ_k W[f,k]·cols[k,p]` for the layer at `index`, where `w` is
    /// the digital matrix (fan-out × fan-in).
    fn product(&self, index: usize, w: &Matrix, cols: &Matrix) -> Result<Matrix, NetworkError> {
        match self {
            Backend::Ideal => Ok(w.matmul(cols)),
            Backend::Memristive(net) => {
                let layer = &net.layers[index];
                if layer.logical_rows != cols.rows || layer.logical_cols != w.rows {
                    return Err(NetworkError::ShapeMismatch {
                        what: "mapped layer",
                        expected: format!("{}x{}", cols.rows, w.rows),
                        got: format!("{}x{}", layer.logical_rows, layer.logical_cols),
                    });
                }
                let cols_t = cols.transpose();
                let mut out_t = Matrix::zeros(cols.cols, w.rows);
                for p in 0..cols.cols {
                    let dst = &mut out_t.data[p * w.rows..(p + 1) * w.rows];
                    layer.vmm_into(cols_t.row(p), dst)?;
                }
                Ok(out_t.transpose())
            }
        }
    }

    fn folded(&self) -> bool {
        matches!(self, Backend::Memristive(net) if net.folded_bn)
    }
}

fn apply_bn(bn: &BatchNorm, data: &mut [f64], stride: usize, folded: bool) {
    if folded {
        for (c, (_, shift)) in bn.affine().into_iter().enumerate() {
            for v in &mut data[c * stride..(c + 1) * stride] {
                *v += shift;
            }
        }
    } else {
        bn.apply_inference(data, stride);
    }
}

/// Output logits of one spectrogram window.
pub fn logits(weights: &LayerWeights, x: &Tensor3, backend: Backend<'_>) -> Result<[f64; CLASSES], NetworkError> {
    weights.check_input(x)?;
    if let Backend::Memristive(net) = backend {
        if net.layers.len() != 5 {
            return Err(NetworkError::ShapeMismatch {
                what: "mapped network",
                expected: "5 layers".into(),
                got: format!("{}", net.layers.len()),
            });
        }
    }
    let folded = backend.folded();
    let mut act = weights.normalize_input(x);
    for (i, def) in CONV_STAGES.iter().enumerate() {
        let cols = layers::im2col(&act, (def.kernel, def.kernel), (def.stride, def.stride))?;
        let oh = (act.height - def.kernel) / def.stride + 1;
        let ow = (act.width - def.kernel) / def.stride + 1;
        if weights.conv[i].cols != cols.rows {
            return Err(NetworkError::ShapeMismatch {
                what: "convolution filters",
                expected: format!("{} inputs", cols.rows),
                got: format!("{}", weights.conv[i].cols),
            });
        }
        let z = backend.product(i, &weights.conv[i], &cols)?;
        let mut y = Tensor3::from_vec(def.filters, oh, ow, z.data);
        apply_bn(&weights.conv_bn[i], &mut y.data, oh * ow, folded);
        layers::relu_inplace(&mut y.data);
        act = layers::maxpool_forward(&y, POOL_SIZE).0;
    }
    let flat = Matrix::from_vec(act.data.len(), 1, act.data);
    let mut h = backend.product(3, &weights.fc1, &flat)?.data;
    apply_bn(&weights.fc1_bn, &mut h, 1, folded);
    layers::relu_inplace(&mut h);
    let h = Matrix::from_vec(FC1_UNITS, 1, h);
    let out = backend.product(4, &weights.fc2, &h)?;
    Ok([out.data[0] + weights.fc2_bias[0], out.data[1] + weights.fc2_bias[1]])
}

/// Class probabilities `[interictal, preictal]` for one window.
pub fn forward(weights: &LayerWeights, x: &Tensor3, backend: Backend<'_>) -> Result<[f64; CLASSES], NetworkError> {
    let l = logits(weights, x, backend)?;
    let p = layers::softmax(&l);
    Ok([p[0], p[1]])
}

/// [`forward`] over many windows in parallel; results keep input order.
pub fn forward_batch(
    weights: &LayerWeights,
    xs: &[Tensor3],
    backend: Backend<'_>,
) -> Result<Vec<[f64; CLASSES]>, NetworkError> {
    xs.par_iter().map(|x| forward(weights, x, backend)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn table_shapes_n22_p60() {
        let s = shapes(22, 60).unwrap();
        let outs: Vec<_> = s.iter().map(|l| l.output).collect();
        assert_eq!(
            outs,
            vec![
                (16, 28, 55),
                (16, 14, 27),
                (32, 12, 25),
                (32, 6, 12),
                (64, 4, 10),
                (64, 2, 5),
                (256, 1, 1),
                (2, 1, 1)
            ]
        );
        assert_eq!(s[0].fan_in, 550);
        assert_eq!(s[6].fan_in, 640);
        // Symbolic forms with floor division.
        let p = 60;
        assert_eq!(s[0].output.1, (p - 3) / 2);
        assert_eq!(s[1].output.1, (p - 3) / 4);
        assert_eq!(s[2].output.1, (p - 11) / 4);
        assert_eq!(s[3].output.1, (p - 11) / 8);
        assert_eq!(s[4].output.1, (p - 27) / 8);
        assert_eq!(s[5].output.1, (p - 27) / 16);
    }

    #[test]
    fn single_channel_changes_fan_in_only() {
        let a = shapes(1, 60).unwrap();
        let b = shapes(22, 60).unwrap();
        assert_eq!(a[0].fan_in, 25);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.output, y.output);
        }
    }

    #[test]
    fn collapsing_specs_rejected() {
        assert!(shapes(1, 20).is_err());
        assert!(shapes(0, 60).is_err());
        assert!(NetworkSpec::new(1, 60, 10).is_err());
        assert!(NetworkSpec::for_window(2, 30).is_ok());
    }

    #[test]
    fn zero_weights_give_uniform_output() {
        let spec = NetworkSpec::for_window(2, 30).unwrap();
        let w = LayerWeights::zeros(spec).unwrap();
        let x = Tensor3::from_vec(2, 60, 114, (0..2 * 60 * 114).map(|i| (i % 17) as f64).collect());
        assert_eq!(forward(&w, &x, Backend::Ideal).unwrap(), [0.5, 0.5]);
        let bad = Tensor3::zeros(1, 60, 114);
        assert!(forward(&w, &bad, Backend::Ideal).is_err());
    }

    #[test]
    fn ideal_crossbar_matches_ideal_backend() {
        let spec = NetworkSpec::for_window(1, 22).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let w = LayerWeights::kaiming(spec, &mut rng).unwrap();
        let x = Tensor3::from_vec(
            1,
            44,
            114,
            (0..44 * 114).map(|i| ((i * 7919) % 101) as f64 / 50.0 - 1.0).collect(),
        );
        let ideal = logits(&w, &x, Backend::Ideal).unwrap();
        for fold in [false, true] {
            let opts = MappingOptions {
                fold_batchnorm: fold,
                ..Default::default()
            };
            let net = MappedNetwork::map(&w, &opts, 3).unwrap();
            let mem = logits(&w, &x, Backend::Memristive(&net)).unwrap();
            for k in 0..2 {
                assert!(
                    (mem[k] - ideal[k]).abs() <= 1e-4 * ideal[k].abs().max(1e-3),
                    "{mem:?} vs {ideal:?}"
                );
            }
        }
    }

    #[test]
    fn layer_seeds_differ() {
        let s: Vec<u64> = (0..5).map(|i| layer_seed(42, i)).collect();
        for i in 0..5 {
            for j in i + 1..5 {
                assert_ne!(s[i], s[j]);
            }
        }
    }
}
