//! Classification metrics and nonideality sweeps.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crossbar::{self, WeightScheme};
use crate::device::{DeviceParameters, StateCount};
use crate::network::{forward_batch, layer_seed, Backend, LayerWeights, MappedNetwork, MappingOptions, NetworkError};
use crate::preprocess::{ClinicalWindows, Dataset, Label};
use crate::tensor::{Matrix, Tensor3};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("AUROC needs both classes (got {positives} positive, {negatives} negative)")]
    SingleClass { positives: usize, negatives: usize },
    #[error("length mismatch: {0} scores vs {1} labels")]
    LengthMismatch(usize, usize),
    #[error("{false_positives} false positives over {hours} interictal hours")]
    NoInterictalTime { false_positives: usize, hours: f64 },
    #[error("invalid sweep grid: {0}")]
    InvalidGrid(String),
    #[error(transparent)]
    Network(#[from] NetworkError),
}

/// Area under the ROC curve as the Mann–Whitney statistic
/// `(#{pos > neg} + ½·#{pos = neg}) / (P·N)`, with `positive[i]` marking class 1.
pub fn auroc(scores: &[f64], positive: &[bool]) -> Result<f64, EvalError> {
    if scores.len() != positive.len() {
        return Err(EvalError::LengthMismatch(scores.len(), positive.len()));
    }
    let p = positive.iter().filter(|&&b| b).count();
    let n = positive.len() - p;
    if p == 0 || n == 0 {
        return Err(EvalError::SingleClass {
            positives: p,
            negatives: n,
        });
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Integer half-counts keep the result exact.
    let mut twice_wins: u128 = 0;
    let mut neg_below: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        let (mut pos_here, mut neg_here) = (0u128, 0u128);
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            if positive[order[j]] {
                pos_here += 1;
            } else {
                neg_here += 1;
            }
            j += 1;
        }
        twice_wins += 2 * pos_here * neg_below + pos_here * neg_here;
        neg_below += neg_here;
        i = j;
    }
    Ok(twice_wins as f64 / (2.0 * p as f64 * n as f64))
}

/// Confusion counts with preictal as the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    /// `None` when there are no preictal windows.
    pub sensitivity: Option<f64>,
    /// `None` when only one class is present.
    pub auroc: Option<f64>,
    pub fpr_per_hour: f64,
    pub event_sensitivity: Option<f64>,
    pub counts: Confusion,
    pub interictal_hours: f64,
}

pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// Window-level metrics; a window is predicted preictal iff its preictal
/// probability exceeds `threshold`.
pub fn metrics_with_threshold(
    preictal_prob: &[f64],
    labels: &[Label],
    interictal_hours: f64,
    threshold: f64,
) -> Result<MetricsReport, EvalError> {
    if preictal_prob.len() != labels.len() {
        return Err(EvalError::LengthMismatch(preictal_prob.len(), labels.len()));
    }
    let mut c = Confusion::default();
    for (&p, &l) in preictal_prob.iter().zip(labels) {
        match (p > threshold, l) {
            (true, Label::Preictal) => c.tp += 1,
            (true, Label::Interictal) => c.fp += 1,
            (false, Label::Interictal) => c.tn += 1,
            (false, Label::Preictal) => c.fn_ += 1,
        }
    }
    let fpr_per_hour = if interictal_hours > 0.0 {
        c.fp as f64 / interictal_hours
    } else if c.fp == 0 {
        0.0
    } else {
        return Err(EvalError::NoInterictalTime {
            false_positives: c.fp,
            hours: interictal_hours,
        });
    };
    let total = labels.len();
    let positive: Vec<bool> = labels.iter().map(|&l| l == Label::Preictal).collect();
    Ok(MetricsReport {
        accuracy: if total > 0 {
            (c.tp + c.tn) as f64 / total as f64
        } else {
            0.0
        },
        sensitivity: (c.tp + c.fn_ > 0).then(|| c.tp as f64 / (c.tp + c.fn_) as f64),
        auroc: auroc(preictal_prob, &positive).ok(),
        fpr_per_hour,
        event_sensitivity: None,
        counts: c,
        interictal_hours,
    })
}

pub fn metrics(preictal_prob: &[f64], labels: &[Label], interictal_hours: f64) -> Result<MetricsReport, EvalError> {
    metrics_with_threshold(preictal_prob, labels, interictal_hours, DEFAULT_THRESHOLD)
}

/// Fraction of seizures with an alarm `τ` such that the onset lies in
/// `[τ + SPH, τ + SPH + SOP]`. Zero when there are no seizures.
pub fn event_sensitivity(alarms: &[f64], onsets: &[f64], clinical: &ClinicalWindows) -> f64 {
    if onsets.is_empty() {
        return 0.0;
    }
    let sph = clinical.sph_minutes * 60.0;
    let sop = clinical.sop_minutes * 60.0;
    let hit = onsets
        .iter()
        .filter(|&&o| alarms.iter().any(|&a| o >= a + sph && o <= a + sph + sop))
        .count();
    hit as f64 / onsets.len() as f64
}

/// Runs a network over the windows `ids` and scores it.
pub fn evaluate(
    weights: &LayerWeights,
    dataset: &Dataset,
    ids: &[usize],
    backend: Backend<'_>,
) -> Result<MetricsReport, EvalError> {
    let xs: Vec<Tensor3> = ids.par_iter().map(|&i| dataset.window(i)).collect();
    let probs: Vec<f64> = forward_batch(weights, &xs, backend)?.iter().map(|p| p[1]).collect();
    let labels: Vec<Label> = ids.iter().map(|&i| dataset.entries[i].label).collect();
    let interictal = labels.iter().filter(|&&l| l == Label::Interictal).count();
    let hours = interictal as f64 * dataset.meta.window_secs as f64 / 3600.0;
    metrics(&probs, &labels, hours)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepGrid {
    /// Standard deviations of R_ON, Ω.
    pub sigmas: Vec<f64>,
    pub states: Vec<StateCount>,
    pub seeds: Vec<u64>,
}

impl Default for SweepGrid {
    fn default() -> Self {
        Self {
            sigmas: vec![0.0, 100.0, 200.0, 300.0, 400.0, 500.0],
            states: (2..=10).map(StateCount::Discrete).collect(),
            seeds: vec![0, 1, 2],
        }
    }
}

impl SweepGrid {
    pub fn validate(&self) -> Result<(), EvalError> {
        if self.sigmas.is_empty() || self.states.is_empty() || self.seeds.is_empty() {
            return Err(EvalError::InvalidGrid(
                "sigmas, states and seeds must be non-empty".into(),
            ));
        }
        if let Some(s) = self.sigmas.iter().find(|s| !(s.is_finite() && **s >= 0.0)) {
            return Err(EvalError::InvalidGrid(format!(
                "sigma {s} must be finite and non-negative"
            )));
        }
        if let Some(StateCount::Discrete(n)) = self
            .states
            .iter()
            .find(|s| matches!(s, StateCount::Discrete(n) if *n < 2))
        {
            return Err(EvalError::InvalidGrid(format!("{n} states; need at least 2")));
        }
        Ok(())
    }

    /// `(sigma, states, seed)` in lexicographic grid order.
    pub fn cells(&self) -> Vec<(f64, StateCount, u64)> {
        let mut out = Vec::new();
        for &s in &self.sigmas {
            for &n in &self.states {
                for &seed in &self.seeds {
                    out.push((s, n, seed));
                }
            }
        }
        out
    }
}

/// Trained weights of one fold and the windows it is evaluated on.
#[derive(Debug, Clone)]
pub struct FoldModel {
    pub weights: LayerWeights,
    pub validation: Vec<usize>,
}

/// One `(cell, fold)` outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub sigma: f64,
    pub n_states: StateCount,
    pub seed: u64,
    pub fold: usize,
    pub result: Result<MetricsReport, String>,
}

/// Device seed for a sweep cell and fold.
pub fn mapping_seed(seed: u64, fold: usize) -> u64 {
    layer_seed(seed ^ 0x7377_6565_7000_0000, fold as u64)
}

/// Maps one fold's weights for a cell and evaluates it.
pub fn simulate_fold(
    model: &FoldModel,
    dataset: &Dataset,
    base: &MappingOptions,
    sigma: f64,
    n_states: StateCount,
    seed: u64,
    fold: usize,
) -> Result<MetricsReport, EvalError> {
    let opts = MappingOptions {
        device: base.device.with_variability(sigma, n_states),
        ..*base
    };
    let net = MappedNetwork::map(&model.weights, &opts, mapping_seed(seed, fold))?;
    evaluate(&model.weights, dataset, &model.validation, Backend::Memristive(&net))
}

/// Evaluates every grid cell on every fold. Failures are kept per row.
pub fn sweep(
    folds: &[FoldModel],
    dataset: &Dataset,
    grid: &SweepGrid,
    base: &MappingOptions,
) -> Result<Vec<SweepRow>, EvalError> {
    grid.validate()?;
    let jobs: Vec<(f64, StateCount, u64, usize)> = grid
        .cells()
        .into_iter()
        .flat_map(|(s, n, seed)| (0..folds.len()).map(move |f| (s, n, seed, f)))
        .collect();
    Ok(jobs
        .into_par_iter()
        .map(|(sigma, n_states, seed, fold)| SweepRow {
            sigma,
            n_states,
            seed,
            fold,
            result: simulate_fold(&folds[fold], dataset, base, sigma, n_states, seed, fold).map_err(|e| e.to_string()),
        })
        .collect())
}

pub const SWEEP_CSV_HEADER: &str = "sigma,n_states,seed,fold,accuracy,sensitivity,auroc,fpr_per_hour";

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NaN".to_string(), |x| format!("{x:.6}"))
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = format!("{SWEEP_CSV_HEADER}\n");
    for r in rows {
        let (acc, sens, auc, fpr) = match &r.result {
            Ok(m) => (Some(m.accuracy), m.sensitivity, m.auroc, Some(m.fpr_per_hour)),
            Err(_) => (None, None, None, None),
        };
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.sigma,
            r.n_states,
            r.seed,
            r.fold,
            opt(acc),
            opt(sens),
            opt(auc),
            opt(fpr)
        );
    }
    out
}

/// Mean and sample standard deviation of each metric for one `(sigma, states)` cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellSummary {
    pub sigma: f64,
    pub n_states: StateCount,
    pub completed: usize,
    pub accuracy: (f64, f64),
    pub sensitivity: (f64, f64),
    pub auroc: (f64, f64),
    pub fpr_per_hour: (f64, f64),
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let m = v.iter().sum::<f64>() / v.len() as f64;
    if v.len() < 2 {
        return (m, 0.0);
    }
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64;
    (m, var.sqrt())
}

/// Aggregates rows over seeds and folds, in grid order.
pub fn summarize(rows: &[SweepRow], grid: &SweepGrid) -> Vec<CellSummary> {
    let mut out = Vec::new();
    for &sigma in &grid.sigmas {
        for &n_states in &grid.states {
            let ok: Vec<&MetricsReport> = rows
                .iter()
                .filter(|r| r.sigma == sigma && r.n_states == n_states)
                .filter_map(|r| r.result.as_ref().ok())
                .collect();
            let pick =
                |f: &dyn Fn(&MetricsReport) -> Option<f64>| -> Vec<f64> { ok.iter().filter_map(|m| f(m)).collect() };
            out.push(CellSummary {
                sigma,
                n_states,
                completed: ok.len(),
                accuracy: mean_std(&pick(&|m| Some(m.accuracy))),
                sensitivity: mean_std(&pick(&|m| m.sensitivity)),
                auroc: mean_std(&pick(&|m| m.auroc)),
                fpr_per_hour: mean_std(&pick(&|m| Some(m.fpr_per_hour))),
            });
        }
    }
    out
}

/// Mean relative VMM error of `w` (fan-in × fan-out) over random inputs and
/// device seeds: `|y_xbar − y| / Σ|w·x|` averaged over outputs.
pub fn mean_vmm_error(
    w: &Matrix,
    inputs: usize,
    scheme: WeightScheme,
    device: &DeviceParameters,
    seeds: &[u64],
) -> Result<f64, EvalError> {
    let mut total = 0.0;
    let mut count = 0usize;
    for &seed in seeds {
        let layer = crossbar::map_weights(w, scheme, device, crossbar::TileConfig::default(), seed)
            .map_err(NetworkError::from)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        for _ in 0..inputs {
            let x: Vec<f64> = (0..w.rows).map(|_| rng.random_range(-1.0..1.0)).collect();
            let y = layer.vmm(&x).map_err(NetworkError::from)?;
            for (j, yj) in y.iter().enumerate() {
                let (mut exact, mut scale) = (0.0, 0.0);
                for (i, xi) in x.iter().enumerate() {
                    exact += w.get(i, j) * xi;
                    scale += (w.get(i, j) * xi).abs();
                }
                if scale > 0.0 {
                    total += (yj - exact).abs() / scale;
                    count += 1;
                }
            }
        }
    }
    Ok(if count > 0 { total / count as f64 } else { 0.0 })
}
