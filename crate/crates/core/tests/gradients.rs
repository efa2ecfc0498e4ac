//! Backprop versus central finite differences (h = 1e-3, f64).

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use xbarsim::network::layers::{
    batchnorm_backward, batchnorm_train_forward, conv_backward, conv_forward, log_softmax, maxpool_backward,
    maxpool_forward, relu_backward_inplace, relu_inplace, BatchNorm,
};
use xbarsim::network::{loss_and_gradients, LayerWeights, NetworkSpec};
use xbarsim::tensor::{Matrix, Tensor3};

const H: f64 = 1e-3;
const REL: f64 = 1e-4;
const ABS_FLOOR: f64 = 1e-8;

fn close(analytic: f64, numeric: f64) -> bool {
    (analytic - numeric).abs() <= REL * analytic.abs().max(numeric.abs()) + ABS_FLOOR
}

fn central(f: &mut dyn FnMut(f64) -> f64, x: f64) -> f64 {
    (f(x + H) - f(x - H)) / (2.0 * H)
}

fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn convolution(seed in any::<u64>(), c in 1usize..4, f in 1usize..4, k in 1usize..4, s in 1usize..3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (h, w) = (k + 4, k + 5);
        let x = Tensor3::from_vec(c, h, w, random_vec(&mut rng, c * h * w));
        let filters = Matrix::from_vec(f, c * k * k, random_vec(&mut rng, f * c * k * k));
        let (out, cols) = conv_forward(&x, &filters, k, s).unwrap();
        let r = Tensor3::from_vec(out.channels, out.height, out.width, random_vec(&mut rng, out.data.len()));
        let (dw, dx) = conv_backward(&r, &cols, &filters, x.shape(), k, s);
        for i in 0..filters.data.len() {
            let mut loss = |v: f64| {
                let mut w2 = filters.clone();
                w2.data[i] = v;
                dot(&conv_forward(&x, &w2, k, s).unwrap().0.data, &r.data)
            };
            let num = central(&mut loss, filters.data[i]);
            prop_assert!(close(dw.data[i], num), "dW[{i}] {} vs {num}", dw.data[i]);
        }
        for i in 0..x.data.len() {
            let mut loss = |v: f64| {
                let mut x2 = x.clone();
                x2.data[i] = v;
                dot(&conv_forward(&x2, &filters, k, s).unwrap().0.data, &r.data)
            };
            let num = central(&mut loss, x.data[i]);
            prop_assert!(close(dx.data[i], num), "dx[{i}] {} vs {num}", dx.data[i]);
        }
    }

    #[test]
    fn max_pooling(seed in any::<u64>(), c in 1usize..3, h in 2usize..7, w in 2usize..7) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // Distinct values at least 0.01 apart keep every window's maximum unique under ±h.
        let n = c * h * w;
        let mut values: Vec<f64> = (0..n).map(|i| i as f64 * 0.01).collect();
        for i in (1..n).rev() {
            values.swap(i, rng.random_range(0..=i));
        }
        let x = Tensor3::from_vec(c, h, w, values);
        let (out, arg) = maxpool_forward(&x, 2);
        let r = random_vec(&mut rng, out.data.len());
        let dx = maxpool_backward(&Tensor3::from_vec(out.channels, out.height, out.width, r.clone()), &arg, x.shape());
        for i in 0..n {
            let mut loss = |v: f64| {
                let mut x2 = x.clone();
                x2.data[i] = v;
                dot(&maxpool_forward(&x2, 2).0.data, &r)
            };
            let num = central(&mut loss, x.data[i]);
            prop_assert!(close(dx.data[i], num));
        }
    }

    #[test]
    fn rectifier(seed in any::<u64>(), n in 1usize..40) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // Keep inputs clear of the kink.
        let x: Vec<f64> = (0..n).map(|_| {
            let v: f64 = rng.random_range(0.05..1.0);
            if rng.random_bool(0.5) { v } else { -v }
        }).collect();
        let r = random_vec(&mut rng, n);
        let mut act = x.clone();
        relu_inplace(&mut act);
        let mut g = r.clone();
        relu_backward_inplace(&mut g, &act);
        for i in 0..n {
            let mut loss = |v: f64| {
                let mut y = x.clone();
                y[i] = v;
                relu_inplace(&mut y);
                dot(&y, &r)
            };
            prop_assert!(close(g[i], central(&mut loss, x[i])));
        }
    }

    #[test]
    fn batch_norm(seed in any::<u64>(), batch in 2usize..6, channels in 1usize..4, stride in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // Per channel, a shuffled grid with spacing >= 0.5 so the batch variance
        // stays well above the step size.
        let count = batch * stride;
        let mut samples = vec![vec![0.0; channels * stride]; batch];
        for c in 0..channels {
            let mut grid: Vec<f64> = (0..count)
                .map(|k| k as f64 + rng.random_range(0.0..0.5) - count as f64 / 2.0)
                .collect();
            for i in (1..count).rev() {
                grid.swap(i, rng.random_range(0..=i));
            }
            for (k, v) in grid.into_iter().enumerate() {
                samples[k / stride][c * stride + k % stride] = v;
            }
        }
        let mut bn = BatchNorm::identity(channels);
        bn.gain = (0..channels).map(|_| rng.random_range(0.5..1.5)).collect();
        bn.bias = random_vec(&mut rng, channels);
        let r: Vec<Vec<f64>> = (0..batch).map(|_| random_vec(&mut rng, channels * stride)).collect();
        let loss_of = |s: &[Vec<f64>], bn: &BatchNorm| -> f64 {
            let (y, _) = batchnorm_train_forward(s, bn, stride);
            y.iter().zip(&r).map(|(a, b)| dot(a, b)).sum()
        };
        let (_, cache) = batchnorm_train_forward(&samples, &bn, stride);
        let (dx, dgain, dbias) = batchnorm_backward(&r, &cache, &bn);
        for b in 0..batch {
            for i in 0..channels * stride {
                let mut loss = |v: f64| {
                    let mut s = samples.clone();
                    s[b][i] = v;
                    loss_of(&s, &bn)
                };
                let num = central(&mut loss, samples[b][i]);
                prop_assert!(close(dx[b][i], num), "dx[{b}][{i}] {} vs {num}", dx[b][i]);
            }
        }
        for c in 0..channels {
            let mut lg = |v: f64| { let mut b2 = bn.clone(); b2.gain[c] = v; loss_of(&samples, &b2) };
            prop_assert!(close(dgain[c], central(&mut lg, bn.gain[c])));
            let mut lb = |v: f64| { let mut b2 = bn.clone(); b2.bias[c] = v; loss_of(&samples, &b2) };
            prop_assert!(close(dbias[c], central(&mut lb, bn.bias[c])));
        }
    }

    #[test]
    fn log_softmax_nll(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let logits = random_vec(&mut rng, 2);
        let target = rng.random_range(0..2usize);
        let p = log_softmax(&logits);
        for k in 0..2 {
            let analytic = p[k].exp() - if k == target { 1.0 } else { 0.0 };
            let mut loss = |v: f64| { let mut l = logits.clone(); l[k] = v; -log_softmax(&l)[target] };
            prop_assert!(close(analytic, central(&mut loss, logits[k])));
        }
    }
}

/// Step for the composed network. With thousands of ReLU and max-pool
/// switch points, a 1e-3 probe on a batch-norm parameter crosses several of
/// them; the per-layer checks above cover the smooth pieces at 1e-3.
const H_NETWORK: f64 = 1e-6;

/// Every trainable tensor of the full network, sampled coordinates.
#[test]
fn whole_network() {
    let spec = NetworkSpec::new(2, 44, 44).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut w = LayerWeights::kaiming(spec, &mut rng).unwrap();
    for bn in w.conv_bn.iter_mut().chain([&mut w.fc1_bn]) {
        for g in &mut bn.gain {
            *g = rng.random_range(0.5..1.5);
        }
        for b in &mut bn.bias {
            *b = rng.random_range(-0.2..0.2);
        }
    }
    for b in &mut w.fc2_bias {
        *b = rng.random_range(-0.5..0.5);
    }
    let xs: Vec<Tensor3> = (0..4)
        .map(|_| Tensor3::from_vec(2, 44, 44, random_vec(&mut rng, 2 * 44 * 44)))
        .collect();
    let refs: Vec<&Tensor3> = xs.iter().collect();
    let targets = [0usize, 1, 1, 0];
    let out = loss_and_gradients(&w, &refs, &targets).unwrap();
    let mut checked = 0;
    let mut failures = Vec::new();
    for t in 0..out.grads.len() {
        let len = out.grads[t].len();
        for _ in 0..6 {
            let i = rng.random_range(0..len);
            let loss_at = |v: f64| {
                let mut w2 = w.clone();
                w2.trainable_mut()[t][i] = v;
                loss_and_gradients(&w2, &refs, &targets).unwrap().loss
            };
            let x0 = w.trainable()[t][i];
            let num = (loss_at(x0 + H_NETWORK) - loss_at(x0 - H_NETWORK)) / (2.0 * H_NETWORK);
            if !close(out.grads[t][i], num) {
                failures.push((t, i, out.grads[t][i], num));
            }
            checked += 1;
        }
    }
    assert_eq!(checked, 14 * 6);
    assert!(failures.is_empty(), "{failures:?}");
}
