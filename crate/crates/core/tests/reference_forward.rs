//! The network forward pass against a naive nested-loop implementation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use xbarsim::network::{logits, Backend, LayerWeights, NetworkSpec};
use xbarsim::tensor::Tensor3;

const EPS: f64 = 1e-5;

/// `x[c][h][w]` as nested vectors.
type Grid = Vec<Vec<Vec<f64>>>;

fn to_grid(t: &Tensor3) -> Grid {
    (0..t.channels)
        .map(|c| {
            (0..t.height)
                .map(|h| (0..t.width).map(|w| t.get(c, h, w)).collect())
                .collect()
        })
        .collect()
}

fn conv(x: &Grid, weights: &[f64], filters: usize, k: usize, s: usize) -> Grid {
    let (c_in, h, w) = (x.len(), x[0].len(), x[0][0].len());
    let (oh, ow) = ((h - k) / s + 1, (w - k) / s + 1);
    let mut out = vec![vec![vec![0.0; ow]; oh]; filters];
    for f in 0..filters {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = 0.0;
                for c in 0..c_in {
                    for i in 0..k {
                        for j in 0..k {
                            acc += weights[f * c_in * k * k + (c * k + i) * k + j] * x[c][oy * s + i][ox * s + j];
                        }
                    }
                }
                out[f][oy][ox] = acc;
            }
        }
    }
    out
}

fn bn_relu(v: f64, gain: f64, bias: f64, mean: f64, var: f64) -> f64 {
    (gain * (v - mean) / (var + EPS).sqrt() + bias).max(0.0)
}

fn pool(x: &Grid) -> Grid {
    x.iter()
        .map(|ch| {
            (0..ch.len() / 2)
                .map(|oy| {
                    (0..ch[0].len() / 2)
                        .map(|ox| {
                            ch[2 * oy][2 * ox]
                                .max(ch[2 * oy][2 * ox + 1])
                                .max(ch[2 * oy + 1][2 * ox])
                                .max(ch[2 * oy + 1][2 * ox + 1])
                        })
                        .collect()
                })
                .collect()
        })
        .collect()
}

fn reference(w: &LayerWeights, x: &Tensor3) -> [f64; 2] {
    let mut g = to_grid(x);
    for (c, ch) in g.iter_mut().enumerate() {
        for v in ch.iter_mut().flatten() {
            *v = (*v - w.input_mean[c]) / w.input_std[c];
        }
    }
    let stages = [(16, 5, 2), (32, 3, 1), (64, 3, 1)];
    for (i, &(f, k, s)) in stages.iter().enumerate() {
        let mut y = conv(&g, &w.conv[i].data, f, k, s);
        let bn = &w.conv_bn[i];
        for (c, ch) in y.iter_mut().enumerate() {
            for v in ch.iter_mut().flatten() {
                *v = bn_relu(*v, bn.gain[c], bn.bias[c], bn.mean[c], bn.var[c]);
            }
        }
        g = pool(&y);
    }
    let flat: Vec<f64> = g.into_iter().flatten().flatten().collect();
    let fan_in = flat.len();
    let hidden: Vec<f64> = (0..256)
        .map(|u| {
            let z: f64 = (0..fan_in).map(|i| w.fc1.data[u * fan_in + i] * flat[i]).sum();
            let bn = &w.fc1_bn;
            bn_relu(z, bn.gain[u], bn.bias[u], bn.mean[u], bn.var[u])
        })
        .collect();
    let mut out = [0.0; 2];
    for (o, v) in out.iter_mut().enumerate() {
        *v = (0..256).map(|u| w.fc2.data[o * 256 + u] * hidden[u]).sum::<f64>() + w.fc2_bias[o];
    }
    out
}

fn randomised(spec: NetworkSpec, seed: u64) -> LayerWeights {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w = LayerWeights::kaiming(spec, &mut rng).unwrap();
    for c in 0..spec.channels {
        w.input_mean[c] = rng.random_range(-0.5..0.5);
        w.input_std[c] = rng.random_range(0.5..2.0);
    }
    for bn in w.conv_bn.iter_mut().chain([&mut w.fc1_bn]) {
        for c in 0..bn.gain.len() {
            bn.gain[c] = rng.random_range(0.5..1.5);
            bn.bias[c] = rng.random_range(-0.3..0.3);
            bn.mean[c] = rng.random_range(-0.3..0.3);
            bn.var[c] = rng.random_range(0.5..2.0);
        }
    }
    w.fc2_bias = vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
    w
}

#[test]
fn matches_naive_loops() {
    for (n, t, seed) in [(1usize, 22usize, 1u64), (3, 25, 2), (2, 30, 3)] {
        let spec = NetworkSpec::for_window(n, t).unwrap();
        let w = randomised(spec, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
        let data = (0..spec.input_len()).map(|_| rng.random_range(-2.0..2.0)).collect();
        let x = Tensor3::from_vec(n, spec.frames, spec.freq_bins, data);
        let got = logits(&w, &x, Backend::Ideal).unwrap();
        let want = reference(&w, &x);
        for k in 0..2 {
            let tol = 1e-10 * want[k].abs().max(1.0);
            assert!(
                (got[k] - want[k]).abs() <= tol,
                "n={n} t={t} logit {k}: {} vs {}",
                got[k],
                want[k]
            );
        }
    }
}
