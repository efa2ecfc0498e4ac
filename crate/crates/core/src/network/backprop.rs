//! Training-mode forward and backward pass over a batch.
//!
//! Batch norm uses batch statistics here. Per-sample work runs in parallel and
//! every reduction over the batch is a sequential sum in sample order, so results
//! do not depend on the thread count.

use rayon::prelude::*;

use super::layers::{self, BatchNormCache};
use super::{LayerWeights, NetworkError, CLASSES, CONV_STAGES, FC1_UNITS, POOL_SIZE};
use crate::tensor::{Matrix, Tensor3};

/// Result of one training-mode pass.
#[derive(Debug, Clone)]
pub struct BatchOutcome {
    /// Mean negative log-likelihood over the batch.
    pub loss: f64,
    /// Samples whose argmax matches the target.
    pub correct: usize,
    /// Gradients in [`LayerWeights::trainable`] order.
    pub grads: Vec<Vec<f64>>,
    /// Batch `(mean, biased variance, element count per channel)` for conv1..3 and fc1.
    pub bn_stats: Vec<(Vec<f64>, Vec<f64>, usize)>,
}

struct StageCache {
    input_shape: (usize, usize, usize),
    cols: Vec<Matrix>,
    bn: BatchNormCache,
    activated: Vec<Tensor3>,
    argmax: Vec<Vec<usize>>,
}

fn add_into(acc: &mut [f64], v: &[f64]) {
    for (a, b) in acc.iter_mut().zip(v) {
        *a += b;
    }
}

/// Mean NLL loss and its gradients w.r.t. every trainable tensor.
pub fn loss_and_gradients(
    weights: &LayerWeights,
    xs: &[&Tensor3],
    targets: &[usize],
) -> Result<BatchOutcome, NetworkError> {
    if xs.is_empty() || xs.len() != targets.len() {
        return Err(NetworkError::ShapeMismatch {
            what: "training batch",
            expected: format!("{} targets", xs.len()),
            got: format!("{}", targets.len()),
        });
    }
    if let Some(&t) = targets.iter().find(|&&t| t >= CLASSES) {
        return Err(NetworkError::ShapeMismatch {
            what: "target class",
            expected: format!("< {CLASSES}"),
            got: format!("{t}"),
        });
    }
    for x in xs {
        weights.check_input(x)?;
    }
    let batch = xs.len();

    // Forward.
    let mut acts: Vec<Tensor3> = xs.par_iter().map(|x| weights.normalize_input(x)).collect();
    let mut stages = Vec::with_capacity(CONV_STAGES.len());
    for (i, def) in CONV_STAGES.iter().enumerate() {
        let filters = &weights.conv[i];
        let input_shape = acts[0].shape();
        let conv: Vec<(Tensor3, Matrix)> = acts
            .par_iter()
            .map(|a| layers::conv_forward(a, filters, def.kernel, def.stride))
            .collect::<Result<_, _>>()?;
        let (oh, ow) = (conv[0].0.height, conv[0].0.width);
        let (zs, cols): (Vec<Vec<f64>>, Vec<Matrix>) = conv.into_iter().map(|(z, c)| (z.data, c)).unzip();
        let (ys, bn) = layers::batchnorm_train_forward(&zs, &weights.conv_bn[i], oh * ow);
        let activated: Vec<Tensor3> = ys
            .into_par_iter()
            .map(|mut y| {
                layers::relu_inplace(&mut y);
                Tensor3::from_vec(def.filters, oh, ow, y)
            })
            .collect();
        let (pooled, argmax): (Vec<Tensor3>, Vec<Vec<usize>>) = activated
            .par_iter()
            .map(|a| layers::maxpool_forward(a, POOL_SIZE))
            .unzip();
        stages.push(StageCache {
            input_shape,
            cols,
            bn,
            activated,
            argmax,
        });
        acts = pooled;
    }
    let pooled_shape = acts[0].shape();
    let flat: Vec<Vec<f64>> = acts.into_iter().map(|a| a.data).collect();
    let z1: Vec<Vec<f64>> = flat
        .par_iter()
        .map(|x| weights.fc1.matmul(&Matrix::from_vec(x.len(), 1, x.clone())).data)
        .collect();
    let (mut hidden, fc1_cache) = layers::batchnorm_train_forward(&z1, &weights.fc1_bn, 1);
    for h in &mut hidden {
        layers::relu_inplace(h);
    }
    let mut loss = 0.0;
    let mut correct = 0;
    let mut dlogits = Vec::with_capacity(batch);
    for (h, &t) in hidden.iter().zip(targets) {
        let mut logits = [weights.fc2_bias[0], weights.fc2_bias[1]];
        for (k, l) in logits.iter_mut().enumerate() {
            *l += weights.fc2.row(k).iter().zip(h).map(|(a, b)| a * b).sum::<f64>();
        }
        let lp = layers::log_softmax(&logits);
        loss -= lp[t];
        let predicted = if logits[1] > logits[0] { 1 } else { 0 };
        if predicted == t {
            correct += 1;
        }
        let mut d: Vec<f64> = lp.iter().map(|l| l.exp() / batch as f64).collect();
        d[t] -= 1.0 / batch as f64;
        dlogits.push(d);
    }
    loss /= batch as f64;

    // Backward through the dense head.
    let mut d_fc2 = vec![0.0; CLASSES * FC1_UNITS];
    let mut d_fc2_bias = vec![0.0; CLASSES];
    let mut d_hidden = Vec::with_capacity(batch);
    for (d, h) in dlogits.iter().zip(&hidden) {
        let mut dh = vec![0.0; FC1_UNITS];
        for k in 0..CLASSES {
            d_fc2_bias[k] += d[k];
            let row = weights.fc2.row(k);
            for u in 0..FC1_UNITS {
                d_fc2[k * FC1_UNITS + u] += d[k] * h[u];
                dh[u] += d[k] * row[u];
            }
        }
        layers::relu_backward_inplace(&mut dh, h);
        d_hidden.push(dh);
    }
    let (dz1, d_fc1_gain, d_fc1_bias) = layers::batchnorm_backward(&d_hidden, &fc1_cache, &weights.fc1_bn);
    let fc1_t = weights.fc1.transpose();
    let flat_len = weights.fc1.cols;
    let mut d_fc1 = vec![0.0; FC1_UNITS * flat_len];
    for (dz, x) in dz1.iter().zip(&flat) {
        for u in 0..FC1_UNITS {
            if dz[u] == 0.0 {
                continue;
            }
            let row = &mut d_fc1[u * flat_len..(u + 1) * flat_len];
            for (r, xv) in row.iter_mut().zip(x) {
                *r += dz[u] * xv;
            }
        }
    }
    let mut d_act: Vec<Tensor3> = dz1
        .par_iter()
        .map(|dz| {
            let dx = fc1_t.matmul(&Matrix::from_vec(FC1_UNITS, 1, dz.clone()));
            Tensor3::from_vec(pooled_shape.0, pooled_shape.1, pooled_shape.2, dx.data)
        })
        .collect();

    // Backward through the convolution stages.
    let mut conv_grads: Vec<(Vec<f64>, Vec<f64>, Vec<f64>)> = Vec::with_capacity(3);
    for (i, def) in CONV_STAGES.iter().enumerate().rev() {
        let stage = &stages[i];
        let activated_shape = stage.activated[0].shape();
        let d_y: Vec<Vec<f64>> = d_act
            .par_iter()
            .zip(&stage.argmax)
            .zip(&stage.activated)
            .map(|((d, arg), a)| {
                let mut g = layers::maxpool_backward(d, arg, activated_shape).data;
                layers::relu_backward_inplace(&mut g, &a.data);
                g
            })
            .collect();
        let (dz, d_gain, d_bias) = layers::batchnorm_backward(&d_y, &stage.bn, &weights.conv_bn[i]);
        let filters = &weights.conv[i];
        let (oh, ow) = (activated_shape.1, activated_shape.2);
        let need_input = i > 0;
        let per_sample: Vec<(Matrix, Option<Tensor3>)> = dz
            .into_par_iter()
            .zip(&stage.cols)
            .map(|(dz, cols)| {
                let dz = Tensor3::from_vec(def.filters, oh, ow, dz);
                if need_input {
                    let (dw, dx) = layers::conv_backward(&dz, cols, filters, stage.input_shape, def.kernel, def.stride);
                    (dw, Some(dx))
                } else {
                    (layers::conv_filter_grad(&dz, cols, filters), None)
                }
            })
            .collect();
        let mut d_filters = vec![0.0; filters.data.len()];
        let mut next = Vec::with_capacity(batch);
        for (dw, dx) in per_sample {
            add_into(&mut d_filters, &dw.data);
            if let Some(dx) = dx {
                next.push(dx);
            }
        }
        conv_grads.push((d_filters, d_gain, d_bias));
        d_act = next;
    }
    conv_grads.reverse();

    let mut grads = Vec::with_capacity(14);
    for (f, g, b) in conv_grads {
        grads.push(f);
        grads.push(g);
        grads.push(b);
    }
    grads.push(d_fc1);
    grads.push(d_fc1_gain);
    grads.push(d_fc1_bias);
    grads.push(d_fc2);
    grads.push(d_fc2_bias);

    let mut bn_stats: Vec<(Vec<f64>, Vec<f64>, usize)> = stages
        .iter()
        .map(|s| (s.bn.batch_mean.clone(), s.bn.batch_var.clone(), batch * s.bn.stride))
        .collect();
    bn_stats.push((fc1_cache.batch_mean.clone(), fc1_cache.batch_var.clone(), batch));

    Ok(BatchOutcome {
        loss,
        correct,
        grads,
        bn_stats,
    })
}
