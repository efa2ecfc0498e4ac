//! Loss, optimizer, cross-validation planning and the training loop.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::network::{loss_and_gradients, LayerWeights, NetworkError, NetworkSpec, CLASSES};
use crate::preprocess::{Dataset, Label};
use crate::tensor::Tensor3;

/// Momentum of the batch-norm running statistics.
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Error)]
pub enum TrainingError {
    #[error("target {target} at position {index} is not a class index")]
    InvalidTarget { index: usize, target: usize },
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error("non-finite gradient in tensor {tensor} at element {index}")]
    NonFiniteGradient { tensor: usize, index: usize },
    #[error("training diverged (fold {fold}, epoch {epoch}, batch {batch}): loss = {loss}")]
    Diverged {
        fold: usize,
        epoch: usize,
        batch: usize,
        loss: f64,
    },
    #[error("class {label} has {count} real windows, fewer than k = {k}")]
    ClassTooSmall { label: Label, count: usize, k: usize },
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error("malformed fold plan: {0}")]
    FoldPlan(String),
    #[error(transparent)]
    Network(#[from] NetworkError),
}

/// Mean negative log-likelihood of `targets` under `log_probs`.
pub fn nll_loss(log_probs: &[[f64; CLASSES]], targets: &[usize]) -> Result<f64, TrainingError> {
    if log_probs.len() != targets.len() || targets.is_empty() {
        return Err(TrainingError::LengthMismatch(format!(
            "{} log-prob rows vs {} targets",
            log_probs.len(),
            targets.len()
        )));
    }
    let mut total = 0.0;
    for (index, (lp, &target)) in log_probs.iter().zip(targets).enumerate() {
        if target >= CLASSES {
            return Err(TrainingError::InvalidTarget { index, target });
        }
        total -= lp[target];
    }
    Ok(total / targets.len() as f64)
}

/// DiffGrad friction coefficient `sigmoid(|g_prev − g|)`.
pub fn friction(g_prev: f64, g: f64) -> f64 {
    1.0 / (1.0 + (-(g_prev - g).abs()).exp())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    #[default]
    DiffGrad,
    Adam,
}

/// Per-parameter moments for Adam-family updates.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub g_prev: Vec<Vec<f64>>,
}

impl OptimizerState {
    /// Zero state for tensors of the given lengths, default betas and eps.
    pub fn new(lengths: &[usize], lr: f64) -> Self {
        let zeros = || lengths.iter().map(|&n| vec![0.0; n]).collect::<Vec<_>>();
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros(),
            v: zeros(),
            g_prev: zeros(),
        }
    }

    pub fn for_weights(w: &LayerWeights, lr: f64) -> Self {
        let lengths: Vec<usize> = w.trainable().iter().map(|t| t.len()).collect();
        Self::new(&lengths, lr)
    }

    /// One DiffGrad update.
    pub fn diffgrad_step(&mut self, params: &mut [&mut [f64]], grads: &[Vec<f64>]) -> Result<(), TrainingError> {
        self.step_with(params, grads, friction)
    }

    /// One Adam update (DiffGrad with unit friction).
    pub fn adam_step(&mut self, params: &mut [&mut [f64]], grads: &[Vec<f64>]) -> Result<(), TrainingError> {
        self.step_with(params, grads, |_, _| 1.0)
    }

    pub fn apply(
        &mut self,
        kind: Optimizer,
        params: &mut [&mut [f64]],
        grads: &[Vec<f64>],
    ) -> Result<(), TrainingError> {
        match kind {
            Optimizer::DiffGrad => self.diffgrad_step(params, grads),
            Optimizer::Adam => self.adam_step(params, grads),
        }
    }

    fn step_with(
        &mut self,
        params: &mut [&mut [f64]],
        grads: &[Vec<f64>],
        xi: impl Fn(f64, f64) -> f64 + Sync,
    ) -> Result<(), TrainingError> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(TrainingError::LengthMismatch(format!(
                "{} parameter tensors, {} gradients, state for {}",
                params.len(),
                grads.len(),
                self.m.len()
            )));
        }
        for (k, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.len() != self.m[k].len() || g.len() != self.m[k].len() {
                return Err(TrainingError::LengthMismatch(format!("tensor {k}")));
            }
            if let Some(index) = g.iter().position(|v| !v.is_finite()) {
                return Err(TrainingError::NonFiniteGradient { tensor: k, index });
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2, eps, lr) = (self.beta1, self.beta2, self.eps, self.lr);
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        params
            .par_iter_mut()
            .zip(grads.par_iter())
            .zip(self.m.par_iter_mut())
            .zip(self.v.par_iter_mut())
            .zip(self.g_prev.par_iter_mut())
            .for_each(|((((p, g), m), v), gp)| {
                for i in 0..p.len() {
                    m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                    v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                    let m_hat = m[i] / c1;
                    let v_hat = v[i] / c2;
                    p[i] -= lr * (xi(gp[i], g[i]) * m_hat) / (v_hat.sqrt() + eps);
                    gp[i] = g[i];
                }
            });
        Ok(())
    }
}

/// One cross-validation fold, as window ids.
#[derive(Debug, Clone, PartialEq)]
pub struct Fold {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
}

/// Stratified k-fold assignment of a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldPlan {
    pub k: usize,
    pub folds: Vec<Fold>,
    pub synthetic: Vec<bool>,
    /// Validation fold of each window; `None` for synthetic windows.
    pub assignment: Vec<Option<usize>>,
}

/// Deals shuffled real windows of each class round-robin over `k` folds;
/// synthetic windows only ever join training splits.
pub fn stratified_kfold(labels: &[Label], synthetic: &[bool], k: usize, seed: u64) -> Result<FoldPlan, TrainingError> {
    if labels.len() != synthetic.len() {
        return Err(TrainingError::LengthMismatch(format!(
            "{} labels vs {} synthetic flags",
            labels.len(),
            synthetic.len()
        )));
    }
    if k < 2 {
        return Err(TrainingError::InvalidConfig(format!("k = {k}; need at least 2 folds")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignment = vec![None; labels.len()];
    let mut next = 0usize;
    for label in [Label::Interictal, Label::Preictal] {
        let mut ids: Vec<usize> = (0..labels.len())
            .filter(|&i| labels[i] == label && !synthetic[i])
            .collect();
        if ids.len() < k {
            return Err(TrainingError::ClassTooSmall {
                label,
                count: ids.len(),
                k,
            });
        }
        ids.shuffle(&mut rng);
        for id in ids {
            assignment[id] = Some(next % k);
            next += 1;
        }
    }
    Ok(plan_from_assignment(k, assignment, synthetic.to_vec()))
}

fn plan_from_assignment(k: usize, assignment: Vec<Option<usize>>, synthetic: Vec<bool>) -> FoldPlan {
    let folds = (0..k)
        .map(|f| Fold {
            train: (0..assignment.len()).filter(|&i| assignment[i] != Some(f)).collect(),
            validation: (0..assignment.len()).filter(|&i| assignment[i] == Some(f)).collect(),
        })
        .collect();
    FoldPlan {
        k,
        folds,
        synthetic,
        assignment,
    }
}

impl FoldPlan {
    /// `window_id,synthetic,validation_fold` rows; the fold is empty for synthetic windows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("window_id,synthetic,validation_fold\n");
        for (i, a) in self.assignment.iter().enumerate() {
            let fold = a.map(|f| f.to_string()).unwrap_or_default();
            let _ = writeln!(out, "{i},{},{fold}", u8::from(self.synthetic[i]));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self, TrainingError> {
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some("window_id,synthetic,validation_fold") {
            return Err(TrainingError::FoldPlan("missing header".into()));
        }
        let mut assignment = Vec::new();
        let mut synthetic = Vec::new();
        for (n, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let bad = || TrainingError::FoldPlan(format!("line {}: {line:?}", n + 2));
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 3 || f[0].parse::<usize>().ok() != Some(assignment.len()) {
                return Err(bad());
            }
            let syn = match f[1] {
                "0" => false,
                "1" => true,
                _ => return Err(bad()),
            };
            let fold = if f[2].is_empty() {
                None
            } else {
                Some(f[2].parse::<usize>().map_err(|_| bad())?)
            };
            if syn && fold.is_some() {
                return Err(bad());
            }
            synthetic.push(syn);
            assignment.push(fold);
        }
        let k = assignment.iter().flatten().max().map_or(0, |m| m + 1);
        Ok(plan_from_assignment(k, assignment, synthetic))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub folds: usize,
    pub optimizer: Optimizer,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 256,
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            folds: 5,
            optimizer: Optimizer::DiffGrad,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainingError> {
        let bad = |m: &str| Err(TrainingError::InvalidConfig(m.to_string()));
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad("lr must be a finite non-negative number");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("betas must lie in [0, 1)");
        }
        if self.eps.is_nan() || self.eps <= 0.0 {
            return bad("eps must be positive");
        }
        if self.folds < 2 {
            return bad("folds must be at least 2");
        }
        Ok(())
    }
}

/// One row of `training_log.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub fold: usize,
    pub epoch: usize,
    pub loss: f64,
    pub accuracy: f64,
}

pub const TRAINING_LOG_HEADER: &str = "epoch,fold,loss,train_accuracy";

impl EpochLog {
    pub fn csv_row(&self) -> String {
        format!("{},{},{:.9},{:.6}", self.epoch, self.fold, self.loss, self.accuracy)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub weights: LayerWeights,
    pub log: Vec<EpochLog>,
}

/// Derives independent per-fold seeds.
pub fn fold_seed(seed: u64, fold: usize) -> u64 {
    crate::network::layer_seed(seed ^ 0x7472_6169_6e00_0000, fold as u64)
}

/// Per-channel mean and standard deviation over the given windows.
pub fn channel_statistics(dataset: &Dataset, ids: &[usize]) -> (Vec<f64>, Vec<f64>) {
    let c = dataset.meta.channels;
    let mut sum = vec![0.0; c];
    let mut sq = vec![0.0; c];
    let mut count = 0usize;
    for &i in ids {
        let w = dataset.window(i);
        let stride = w.height * w.width;
        for ch in 0..c {
            for v in &w.data[ch * stride..(ch + 1) * stride] {
                sum[ch] += v;
                sq[ch] += v * v;
            }
        }
        count += stride;
    }
    let n = count.max(1) as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
    let std = sq
        .iter()
        .zip(&mean)
        .map(|(q, m)| {
            let var = (q / n - m * m).max(0.0);
            if var.sqrt() > 1e-8 {
                var.sqrt()
            } else {
                1.0
            }
        })
        .collect();
    (mean, std)
}

fn update_running_stats(weights: &mut LayerWeights, stats: &[(Vec<f64>, Vec<f64>, usize)]) {
    let bns = weights.conv_bn.iter_mut().chain(std::iter::once(&mut weights.fc1_bn));
    for (bn, (mean, var, count)) in bns.zip(stats) {
        let unbias = if *count > 1 {
            *count as f64 / (*count - 1) as f64
        } else {
            1.0
        };
        for c in 0..bn.channels() {
            bn.mean[c] = (1.0 - BN_MOMENTUM) * bn.mean[c] + BN_MOMENTUM * mean[c];
            bn.var[c] = (1.0 - BN_MOMENTUM) * bn.var[c] + BN_MOMENTUM * var[c] * unbias;
        }
    }
}

/// Trains one network on the windows `train_ids` of `dataset`.
pub fn train(
    spec: NetworkSpec,
    dataset: &Dataset,
    train_ids: &[usize],
    cfg: &TrainConfig,
    seed: u64,
    fold: usize,
) -> Result<TrainOutcome, TrainingError> {
    cfg.validate()?;
    let shape = (dataset.meta.channels, dataset.meta.frames, dataset.meta.freq_bins);
    if shape != (spec.channels, spec.frames, spec.freq_bins) {
        return Err(TrainingError::Network(NetworkError::ShapeMismatch {
            what: "dataset windows",
            expected: format!("{:?}", (spec.channels, spec.frames, spec.freq_bins)),
            got: format!("{shape:?}"),
        }));
    }
    if train_ids.is_empty() {
        return Err(TrainingError::InvalidConfig("empty training split".into()));
    }
    let s = fold_seed(seed, fold);
    let mut init_rng = ChaCha8Rng::seed_from_u64(s);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(s);
    shuffle_rng.set_stream(1);

    let mut weights = LayerWeights::kaiming(spec, &mut init_rng)?;
    let (mean, std) = channel_statistics(dataset, train_ids);
    weights.input_mean = mean;
    weights.input_std = std;
    let mut opt = OptimizerState::for_weights(&weights, cfg.lr);
    opt.beta1 = cfg.beta1;
    opt.beta2 = cfg.beta2;
    opt.eps = cfg.eps;

    let windows: Vec<Tensor3> = train_ids.par_iter().map(|&i| dataset.window(i)).collect();
    let targets: Vec<usize> = train_ids.iter().map(|&i| dataset.entries[i].label.index()).collect();
    let mut order: Vec<usize> = (0..train_ids.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for (batch, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let xs: Vec<&Tensor3> = chunk.iter().map(|&i| &windows[i]).collect();
            let ts: Vec<usize> = chunk.iter().map(|&i| targets[i]).collect();
            let out = loss_and_gradients(&weights, &xs, &ts)?;
            if !out.loss.is_finite() {
                return Err(TrainingError::Diverged {
                    fold,
                    epoch,
                    batch,
                    loss: out.loss,
                });
            }
            loss_sum += out.loss * chunk.len() as f64;
            correct += out.correct;
            opt.apply(cfg.optimizer, &mut weights.trainable_mut(), &out.grads)?;
            update_running_stats(&mut weights, &out.bn_stats);
        }
        log.push(EpochLog {
            fold,
            epoch,
            loss: loss_sum / train_ids.len() as f64,
            accuracy: correct as f64 / train_ids.len() as f64,
        });
    }
    Ok(TrainOutcome { weights, log })
}

/// Trains every fold of `plan` in parallel; results come back in fold order.
pub fn train_folds(
    dataset: &Dataset,
    plan: &FoldPlan,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<Vec<TrainOutcome>, TrainingError> {
    let spec = NetworkSpec::new(dataset.meta.channels, dataset.meta.frames, dataset.meta.freq_bins)?;
    plan.folds
        .par_iter()
        .enumerate()
        .map(|(f, fold)| train(spec, dataset, &fold.train, cfg, seed, f))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{forward, Backend};
    use crate::synth::{toy_dataset, ToyConfig};

    #[test]
    fn nll_examples() {
        let ln2 = std::f64::consts::LN_2;
        assert_eq!(nll_loss(&[[f64::NEG_INFINITY, 0.0]], &[1]).unwrap(), 0.0);
        assert!((nll_loss(&[[-ln2, -ln2]], &[0]).unwrap() - ln2).abs() < 1e-12);
        let both = nll_loss(&[[f64::NEG_INFINITY, 0.0], [-ln2, -ln2]], &[1, 0]).unwrap();
        assert!((both - ln2 / 2.0).abs() < 1e-12);
        assert!(matches!(
            nll_loss(&[[0.0, 0.0]], &[2]),
            Err(TrainingError::InvalidTarget { index: 0, target: 2 })
        ));
    }

    #[test]
    fn zero_gradient_first_step_is_noop() {
        let mut p = vec![1.0, -2.0, 3.0];
        let mut s = OptimizerState::new(&[3], 1e-3);
        s.diffgrad_step(&mut [&mut p], &[vec![0.0; 3]]).unwrap();
        assert_eq!(p, vec![1.0, -2.0, 3.0]);
        assert_eq!(s.step, 1);
    }

    #[test]
    fn constant_gradient_halves_the_adam_step() {
        let g = vec![0.3, -1.2];
        let mut p_dg = vec![0.0, 0.0];
        let mut p_adam = p_dg.clone();
        let mut dg = OptimizerState::new(&[2], 1e-2);
        let mut adam = dg.clone();
        for _ in 0..2 {
            let before_dg = p_dg.clone();
            let before_adam = p_adam.clone();
            dg.diffgrad_step(&mut [&mut p_dg], std::slice::from_ref(&g)).unwrap();
            adam.adam_step(&mut [&mut p_adam], std::slice::from_ref(&g)).unwrap();
            if dg.step == 2 {
                for i in 0..2 {
                    let ratio = (p_dg[i] - before_dg[i]) / (p_adam[i] - before_adam[i]);
                    assert!((ratio - 0.5).abs() < 1e-12);
                }
            }
        }
        assert_eq!(friction(0.7, 0.7), 0.5);
    }

    #[test]
    fn large_gradient_change_matches_adam() {
        assert!((1.0 - friction(-10.0, 10.0)).abs() < 1e-8);
        let mut dg = OptimizerState::new(&[1], 1e-3);
        dg.g_prev = vec![vec![-10.0]];
        let mut adam = dg.clone();
        let (mut a, mut b) = (vec![0.5], vec![0.5]);
        dg.diffgrad_step(&mut [&mut a], &[vec![10.0]]).unwrap();
        adam.adam_step(&mut [&mut b], &[vec![10.0]]).unwrap();
        let (da, db) = (a[0] - 0.5, b[0] - 0.5);
        assert!(((da - db) / db).abs() < 1e-6);
    }

    #[test]
    fn unit_friction_is_adam() {
        // Adam written out independently.
        let grads = [vec![0.1, -0.4, 2.0], vec![-0.3, 0.0, 0.7], vec![0.05, 0.5, -1.0]];
        let mut p = vec![0.2, 0.4, -0.6];
        let mut s = OptimizerState::new(&[3], 0.01);
        let (mut m, mut v, mut q) = (vec![0.0; 3], vec![0.0; 3], p.clone());
        for (t, g) in grads.iter().enumerate() {
            s.adam_step(&mut [&mut p], std::slice::from_ref(g)).unwrap();
            let t = (t + 1) as i32;
            for i in 0..3 {
                m[i] = 0.9 * m[i] + (1.0 - 0.9) * g[i];
                v[i] = 0.999 * v[i] + (1.0 - 0.999) * g[i] * g[i];
                let mh = m[i] / (1.0 - 0.9f64.powi(t));
                let vh = v[i] / (1.0 - 0.999f64.powi(t));
                q[i] -= 0.01 * mh / (vh.sqrt() + 1e-8);
            }
        }
        assert_eq!(p, q);
    }

    #[test]
    fn rejects_non_finite_gradients() {
        let mut p = vec![0.0; 2];
        let mut s = OptimizerState::new(&[2], 0.1);
        let err = s.diffgrad_step(&mut [&mut p], &[vec![0.0, f64::NAN]]).unwrap_err();
        assert!(matches!(err, TrainingError::NonFiniteGradient { tensor: 0, index: 1 }));
        assert_eq!(s.step, 0);
    }

    fn labels(pre: usize, int: usize) -> Vec<Label> {
        std::iter::repeat_n(Label::Preictal, pre)
            .chain(std::iter::repeat_n(Label::Interictal, int))
            .collect()
    }

    fn fold_counts(plan: &FoldPlan, l: &[Label]) -> Vec<(usize, usize)> {
        plan.folds
            .iter()
            .map(|f| {
                let pre = f.validation.iter().filter(|&&i| l[i] == Label::Preictal).count();
                (pre, f.validation.len() - pre)
            })
            .collect()
    }

    #[test]
    fn kfold_examples() {
        let l = labels(5, 5);
        let plan = stratified_kfold(&l, &[false; 10], 5, 3).unwrap();
        assert!(fold_counts(&plan, &l).iter().all(|&c| c == (1, 1)));
        let l = labels(10, 20);
        let plan = stratified_kfold(&l, &[false; 30], 5, 3).unwrap();
        assert!(fold_counts(&plan, &l).iter().all(|&c| c == (2, 4)));
        assert!(matches!(
            stratified_kfold(&labels(3, 20), &[false; 23], 5, 0),
            Err(TrainingError::ClassTooSmall {
                label: Label::Preictal,
                count: 3,
                k: 5
            })
        ));
    }

    #[test]
    fn synthetic_windows_only_train() {
        let l = labels(20, 20);
        let syn: Vec<bool> = (0..40).map(|i| (10..20).contains(&i)).collect();
        let plan = stratified_kfold(&l, &syn, 5, 11).unwrap();
        let mut covered = vec![0; 40];
        for f in &plan.folds {
            for &i in &f.validation {
                assert!(!syn[i]);
                covered[i] += 1;
            }
            for i in 10..20 {
                assert!(f.train.contains(&i));
            }
            assert_eq!(f.train.len() + f.validation.len(), 40);
        }
        for i in 0..40 {
            assert_eq!(covered[i], usize::from(!syn[i]));
        }
        assert_eq!(FoldPlan::from_csv(&plan.to_csv()).unwrap(), plan);
        assert_eq!(stratified_kfold(&l, &syn, 5, 11).unwrap(), plan);
        assert_ne!(stratified_kfold(&l, &syn, 5, 12).unwrap(), plan);
    }

    fn toy() -> Dataset {
        toy_dataset(&ToyConfig {
            per_class: 24,
            ..ToyConfig::default()
        })
        .unwrap()
    }

    // The default batch of 256 covers the whole toy set, so epochs are full-batch steps.
    fn quick() -> TrainConfig {
        TrainConfig {
            epochs: 20,
            lr: 1e-3,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn separable_toy_task_is_learned() {
        let ds = toy();
        let ids: Vec<usize> = (0..ds.len()).collect();
        let spec = NetworkSpec::new(ds.meta.channels, ds.meta.frames, ds.meta.freq_bins).unwrap();
        let out = train(spec, &ds, &ids, &quick(), 5, 0).unwrap();
        assert!(out.log.last().unwrap().accuracy >= 0.95, "{:?}", out.log.last());
        let correct = ids
            .iter()
            .filter(|&&i| {
                let p = forward(&out.weights, &ds.window(i), Backend::Ideal).unwrap();
                usize::from(p[1] > p[0]) == ds.entries[i].label.index()
            })
            .count();
        assert!(correct as f64 / ids.len() as f64 >= 0.95);
        for w in out.log[4..].windows(2) {
            assert!(w[1].loss <= w[0].loss, "loss rose after warm-up: {:?}", out.log);
        }
    }

    #[test]
    fn zero_learning_rate_keeps_weights() {
        let ds = toy();
        let ids: Vec<usize> = (0..ds.len()).collect();
        let spec = NetworkSpec::new(ds.meta.channels, ds.meta.frames, ds.meta.freq_bins).unwrap();
        let cfg = TrainConfig {
            epochs: 3,
            lr: 0.0,
            ..quick()
        };
        let trained = train(spec, &ds, &ids, &cfg, 9, 0).unwrap().weights;
        let zero_epochs = TrainConfig { epochs: 0, ..cfg };
        let init = train(spec, &ds, &ids, &zero_epochs, 9, 0).unwrap().weights;
        assert_eq!(trained.trainable(), init.trainable());
    }

    #[test]
    fn same_seed_same_weights() {
        let ds = toy();
        let ids: Vec<usize> = (0..ds.len()).collect();
        let spec = NetworkSpec::new(ds.meta.channels, ds.meta.frames, ds.meta.freq_bins).unwrap();
        let cfg = TrainConfig { epochs: 2, ..quick() };
        let a = train(spec, &ds, &ids, &cfg, 1, 0).unwrap();
        let b = train(spec, &ds, &ids, &cfg, 1, 0).unwrap();
        assert_eq!(a.weights, b.weights);
        assert_eq!(a.log, b.log);
    }
}
