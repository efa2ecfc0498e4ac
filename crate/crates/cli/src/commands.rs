use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use xbarsim::costmodel::{cost_csv, cost_table, estimate_layers};
use xbarsim::eval::{evaluate, simulate_fold, summarize, sweep, sweep_csv, FoldModel};
use xbarsim::io::write_atomic;
use xbarsim::network::{load_weights, save_weights, MappingOptions};
use xbarsim::preprocess::{
    build_dataset, parse_annotations, parse_edf, parse_summary, timeline_from_headers, timeline_from_summary,
    BuildOptions, Dataset, EegRecord, RecordingInput, INDEX_CSV,
};
use xbarsim::synth::{toy_dataset, write_edf_fixtures, EdfFixtureConfig, ToyConfig};
use xbarsim::training::{stratified_kfold, train_folds, EpochLog, TRAINING_LOG_HEADER};
use xbarsim::{Backend, Label, MetricsReport, NetworkSpec, ReadoutMode, StateCount, WeightScheme};

use crate::config::RunConfig;
use crate::UsageError;

pub const FOLDS_CSV: &str = "folds.csv";
pub const TRAINING_LOG: &str = "training_log.csv";
pub const VALIDATION_METRICS: &str = "validation_metrics.csv";
pub const SIMULATE_CSV: &str = "simulate.csv";
pub const SWEEP_CSV: &str = "sweep.csv";
pub const COST_CSV: &str = "cost_report.csv";

fn write(path: &Path, text: &str) -> Result<()> {
    write_atomic(path, text.as_bytes()).with_context(|| format!("writing {}", path.display()))
}

fn fold_dir(cfg: &RunConfig, fold: usize) -> PathBuf {
    cfg.train_dir().join(format!("fold_{fold}"))
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NaN".into(), |x| format!("{x:.6}"))
}

fn metric_fields(m: &MetricsReport) -> String {
    format!(
        "{:.6},{},{},{:.6}",
        m.accuracy,
        opt(m.sensitivity),
        opt(m.auroc),
        m.fpr_per_hour
    )
}

fn mean(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// `chb01_03.edf` → `chb01`.
fn patient_prefix(edf: &Path) -> String {
    let stem = edf
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    match stem.split_once('_') {
        Some((p, _)) => p.to_string(),
        None => stem,
    }
}

pub fn preprocess(cfg: &RunConfig) -> Result<()> {
    let dir = &cfg.paths.data_dir;
    RunConfig::require(dir, "data directory")?;
    let mut edfs: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("listing {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("edf")))
        .collect();
    edfs.sort();
    if edfs.is_empty() {
        return Err(UsageError(format!("no .edf files in {}", dir.display())).into());
    }
    let summary_path = cfg
        .paths
        .summary
        .clone()
        .unwrap_or_else(|| dir.join(format!("{}-summary.txt", patient_prefix(&edfs[0]))));
    if !summary_path.is_file() {
        return Err(UsageError(format!("summary file not found: {}", summary_path.display())).into());
    }
    let summary_text =
        fs::read_to_string(&summary_path).with_context(|| format!("reading {}", summary_path.display()))?;
    let listing = parse_summary(&summary_text).with_context(|| format!("parsing {}", summary_path.display()))?;
    let annotations =
        parse_annotations(&summary_text).with_context(|| format!("parsing {}", summary_path.display()))?;

    let mut records: Vec<(String, EegRecord)> = Vec::new();
    let mut failures = 0usize;
    for path in &edfs {
        let name = path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        match fs::read(path)
            .map_err(anyhow::Error::from)
            .and_then(|b| Ok(parse_edf(&b)?))
        {
            Ok(rec) => records.push((name, rec)),
            Err(e) => {
                eprintln!("error: {}: {e:#}", path.display());
                failures += 1;
            }
        }
    }
    if failures > 0 {
        bail!("{failures} EDF file(s) failed to parse");
    }

    let from_summary = timeline_from_summary(&listing);
    let timeline: HashMap<String, f64> = if records.iter().all(|(n, _)| from_summary.contains_key(n)) {
        from_summary
    } else {
        eprintln!("warning: some files lack summary start times; placing recordings by EDF header dates");
        timeline_from_headers(&records)
    };
    let present: HashMap<&str, ()> = records.iter().map(|(n, _)| (n.as_str(), ())).collect();
    let (seizures, dropped): (Vec<_>, Vec<_>) = annotations
        .into_iter()
        .partition(|a| present.contains_key(a.file.as_str()));
    for a in &dropped {
        eprintln!(
            "warning: seizure at {} s in {} ignored: file not present",
            a.onset, a.file
        );
    }
    if seizures.is_empty() {
        eprintln!("warning: no seizures annotated; the dataset will contain interictal windows only");
    }

    let recordings: Vec<RecordingInput> = records
        .into_iter()
        .map(|(name, record)| RecordingInput {
            start: timeline[&name],
            name,
            record,
        })
        .collect();
    let opts = BuildOptions {
        clinical: cfg.clinical.clone(),
        channels: (!cfg.preprocess.channels.is_empty()).then(|| cfg.preprocess.channels.clone()),
    };
    let ds = build_dataset(&recordings, &seizures, &opts)?;
    let out = cfg.dataset_dir();
    ds.save(&out)?;
    println!(
        "{} windows: {} interictal, {} preictal ({} synthetic); overlap step S = {:.4} s",
        ds.len(),
        ds.count(Label::Interictal, None),
        ds.count(Label::Preictal, None),
        ds.count(Label::Preictal, Some(true)),
        ds.meta.step_seconds
    );
    println!("dataset written to {}", out.display());
    Ok(())
}

fn load_dataset(cfg: &RunConfig) -> Result<Dataset> {
    let dir = cfg.dataset_dir();
    RunConfig::require(&dir.join(INDEX_CSV), "dataset")?;
    Ok(Dataset::load(&dir)?)
}

pub fn train(cfg: &RunConfig) -> Result<()> {
    let ds = load_dataset(cfg)?;
    let plan = stratified_kfold(&ds.labels(), &ds.synthetic(), cfg.training.folds, cfg.seed)?;
    let dir = cfg.train_dir();
    write(&dir.join(FOLDS_CSV), &plan.to_csv())?;
    let outcomes = train_folds(&ds, &plan, &cfg.training, cfg.seed)?;

    let mut log = format!("{TRAINING_LOG_HEADER}\n");
    let mut metrics = String::from("fold,accuracy,sensitivity,auroc,fpr_per_hour\n");
    for (f, (outcome, fold)) in outcomes.iter().zip(&plan.folds).enumerate() {
        save_weights(&fold_dir(cfg, f), &outcome.weights)?;
        for row in &outcome.log {
            log.push_str(&row.csv_row());
            log.push('\n');
        }
        let m = evaluate(&outcome.weights, &ds, &fold.validation, Backend::Ideal)?;
        let _ = writeln!(metrics, "{f},{}", metric_fields(&m));
        let last = outcome.log.last().cloned().unwrap_or(EpochLog {
            fold: f,
            epoch: 0,
            loss: f64::NAN,
            accuracy: f64::NAN,
        });
        println!(
            "fold {f}: loss {:.4}, train accuracy {:.4}, validation accuracy {:.4}, sensitivity {}",
            last.loss,
            last.accuracy,
            m.accuracy,
            opt(m.sensitivity)
        );
    }
    write(&dir.join(TRAINING_LOG), &log)?;
    write(&dir.join(VALIDATION_METRICS), &metrics)?;
    println!("weights written to {}", dir.display());
    Ok(())
}

fn load_models(cfg: &RunConfig, ds: &Dataset) -> Result<Vec<FoldModel>> {
    let dir = cfg.train_dir();
    let folds_path = dir.join(FOLDS_CSV);
    if !folds_path.is_file() {
        return Err(UsageError(format!(
            "weights not found: {} (run `train` first)",
            folds_path.display()
        ))
        .into());
    }
    let text = fs::read_to_string(&folds_path).with_context(|| format!("reading {}", folds_path.display()))?;
    let plan = xbarsim::FoldPlan::from_csv(&text).with_context(|| format!("parsing {}", folds_path.display()))?;
    if plan.assignment.len() != ds.len() {
        bail!(
            "{} lists {} windows but the dataset has {}",
            folds_path.display(),
            plan.assignment.len(),
            ds.len()
        );
    }
    plan.folds
        .into_iter()
        .enumerate()
        .map(|(f, fold)| {
            let path = fold_dir(cfg, f);
            if !path.is_dir() {
                return Err(UsageError(format!("weights not found: {}", path.display())).into());
            }
            let weights = load_weights(&path).with_context(|| format!("loading {}", path.display()))?;
            Ok(FoldModel {
                weights,
                validation: fold.validation,
            })
        })
        .collect()
}

fn mapping_options(cfg: &RunConfig, scheme: WeightScheme) -> MappingOptions {
    MappingOptions {
        scheme,
        device: cfg.device,
        tile: cfg.hardware.tile,
        read_voltage: cfg.hardware.read_voltage,
        fold_batchnorm: cfg.mapping.fold_batchnorm,
    }
}

pub struct SimulateArgs {
    pub sigma: Option<f64>,
    pub states: Option<StateCount>,
    pub scheme: Option<WeightScheme>,
    pub out: Option<PathBuf>,
}

pub fn simulate(cfg: &RunConfig, args: &SimulateArgs) -> Result<()> {
    let device = cfg.device.with_variability(
        args.sigma.unwrap_or(cfg.device.sigma),
        args.states.unwrap_or(cfg.device.n_states),
    );
    device.validate().map_err(|e| UsageError(e.to_string()))?;
    let scheme = args.scheme.unwrap_or(cfg.mapping.scheme);
    let ds = load_dataset(cfg)?;
    let models = load_models(cfg, &ds)?;
    let base = mapping_options(cfg, scheme);
    let mut csv = String::from("fold,sigma,n_states,scheme,accuracy,sensitivity,auroc,fpr_per_hour\n");
    let mut reports = Vec::new();
    for (f, model) in models.iter().enumerate() {
        let m = simulate_fold(model, &ds, &base, device.sigma, device.n_states, cfg.seed, f)
            .with_context(|| format!("fold {f}"))?;
        let _ = writeln!(
            csv,
            "{f},{},{},{scheme},{}",
            device.sigma,
            device.n_states,
            metric_fields(&m)
        );
        reports.push(m);
    }
    let path = args
        .out
        .clone()
        .unwrap_or_else(|| cfg.paths.output_dir.join(SIMULATE_CSV));
    write(&path, &csv)?;
    println!(
        "sigma {} ohm, {} states, {scheme} column: mean accuracy {}, sensitivity {}, AUROC {}",
        device.sigma,
        device.n_states,
        opt(mean(reports.iter().map(|m| Some(m.accuracy)))),
        opt(mean(reports.iter().map(|m| m.sensitivity))),
        opt(mean(reports.iter().map(|m| m.auroc)))
    );
    println!("metrics written to {}", path.display());
    Ok(())
}

pub struct SweepArgs {
    pub sigmas: Option<Vec<f64>>,
    pub states: Option<Vec<StateCount>>,
    pub seeds: Option<Vec<u64>>,
    pub scheme: Option<WeightScheme>,
}

pub fn run_sweep(cfg: &RunConfig, args: &SweepArgs) -> Result<()> {
    let mut grid = cfg.sweep.clone();
    if let Some(s) = &args.sigmas {
        grid.sigmas = s.clone();
    }
    if let Some(s) = &args.states {
        grid.states = s.clone();
    }
    if let Some(s) = &args.seeds {
        grid.seeds = s.clone();
    }
    grid.validate().map_err(|e| UsageError(e.to_string()))?;
    let ds = load_dataset(cfg)?;
    let models = load_models(cfg, &ds)?;
    let base = mapping_options(cfg, args.scheme.unwrap_or(cfg.mapping.scheme));
    let rows = sweep(&models, &ds, &grid, &base)?;
    let path = cfg.paths.output_dir.join(SWEEP_CSV);
    write(&path, &sweep_csv(&rows))?;
    let failed = rows.iter().filter(|r| r.result.is_err()).count();
    println!(
        "{:>8} {:>11} {:>10} {:>17} {:>10}",
        "sigma", "states", "runs", "sensitivity", "auroc"
    );
    for c in summarize(&rows, &grid) {
        println!(
            "{:>8} {:>11} {:>10} {:>8.4} ± {:<6.4} {:>10.4}",
            c.sigma, c.n_states, c.completed, c.sensitivity.0, c.sensitivity.1, c.auroc.0
        );
    }
    if failed > 0 {
        eprintln!("warning: {failed} of {} runs failed; see NaN rows", rows.len());
    }
    println!("sweep written to {}", path.display());
    Ok(())
}

pub fn cost(cfg: &RunConfig, modes: &[ReadoutMode], strict: bool) -> Result<()> {
    let spec = NetworkSpec::for_window(cfg.network.channels, cfg.clinical.window_secs)
        .map_err(|e| UsageError(format!("network spec: {e}")))?;
    let layers = spec.linear_layers()?;
    let reports = modes
        .iter()
        .map(|&m| estimate_layers(&layers, &cfg.hardware, m, strict))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| UsageError(e.to_string()))?;
    let path = cfg.paths.output_dir.join(COST_CSV);
    write(&path, &cost_csv(&reports))?;
    print!("{}", cost_table(&reports));
    println!("report written to {}", path.display());
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SynthKind {
    Toy,
    Edf,
    All,
}

pub struct SynthArgs {
    pub out: PathBuf,
    pub kind: SynthKind,
    pub toy: ToyConfig,
    pub edf: EdfFixtureConfig,
}

fn toy_config_text(toy: &ToyConfig) -> String {
    format!(
        "seed = 1\n\n[paths]\noutput_dir = \"toy-out\"\ndataset_dir = \"toy\"\n\n\
         [clinical]\nwindow_secs = {}\n\n[network]\nchannels = {}\n\n\
         [training]\nepochs = 20\nlr = 1e-3\nbatch_size = 256\nfolds = 5\n\n\
         [sweep]\nsigmas = [0.0, 100.0, 200.0, 300.0, 400.0, 500.0]\nstates = [2, 4, 10]\nseeds = [0, 1, 2]\n",
        toy.window_secs, toy.channels
    )
}

fn edf_config_text(edf: &EdfFixtureConfig) -> String {
    format!(
        "seed = 1\n\n[paths]\ndata_dir = \"edf\"\noutput_dir = \"edf-out\"\n\n\
         [clinical]\nsop_minutes = 5.0\nsph_minutes = 2.0\nwindow_secs = 30\ninterictal_guard_hours = 0.25\n\n\
         [network]\nchannels = {}\n\n[training]\nepochs = 5\nlr = 1e-3\nfolds = 5\n",
        edf.channels
    )
}

pub fn synth_data(args: &SynthArgs) -> Result<()> {
    if matches!(args.kind, SynthKind::Toy | SynthKind::All) {
        let ds = toy_dataset(&args.toy)?;
        let dir = args.out.join("toy");
        ds.save(&dir)?;
        write(&args.out.join("toy.toml"), &toy_config_text(&args.toy))?;
        println!("toy dataset: {} windows in {}", ds.len(), dir.display());
    }
    if matches!(args.kind, SynthKind::Edf | SynthKind::All) {
        let dir = args.out.join("edf");
        let files = write_edf_fixtures(&dir, &args.edf)?;
        write(&args.out.join("edf.toml"), &edf_config_text(&args.edf))?;
        println!("EDF fixtures: {} files in {}", files.len(), dir.display());
    }
    Ok(())
}
