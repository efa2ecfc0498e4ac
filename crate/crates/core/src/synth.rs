//! Bundled synthetic data: a separable toy spectrogram task and EDF fixtures
//! in the layout of a public scalp-EEG archive.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::io::write_atomic;
use crate::network::FREQ_BINS;
use crate::preprocess::{
    write_edf, Calibration, Dataset, DatasetMeta, EdfHeader, EegRecord, Label, LabeledWindow, PreprocessError,
    SignalHeader,
};
use crate::tensor::Tensor3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyConfig {
    /// Windows per class.
    pub per_class: usize,
    pub channels: usize,
    pub window_secs: usize,
    /// Peak height of the class blob above the background.
    pub separation: f64,
    /// Background noise standard deviation.
    pub noise: f64,
    pub seed: u64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            per_class: 50,
            channels: 1,
            window_secs: 22,
            separation: 1.5,
            noise: 0.5,
            seed: 7,
        }
    }
}

/// Two Gaussian blobs in time–frequency: interictal windows carry a bump
/// around 20 Hz, preictal windows around 90 Hz, on a noisy unit background.
/// Classes alternate in id order.
pub fn toy_dataset(cfg: &ToyConfig) -> Result<Dataset, PreprocessError> {
    let frames = 2 * cfg.window_secs;
    let meta = DatasetMeta {
        channels: cfg.channels,
        frames,
        freq_bins: FREQ_BINS,
        window_secs: cfg.window_secs,
        sample_rate: 256.0,
        step_seconds: cfg.window_secs as f64,
        channel_labels: (0..cfg.channels).map(|c| format!("toy{c}")).collect(),
    };
    let noise = Normal::new(0.0, cfg.noise.max(0.0)).map_err(|e| PreprocessError::Dataset {
        path: "<toy>".into(),
        msg: e.to_string(),
    })?;
    let mut windows = Vec::with_capacity(2 * cfg.per_class);
    for i in 0..2 * cfg.per_class {
        let label = if i % 2 == 0 { Label::Interictal } else { Label::Preictal };
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(i as u64);
        let centre_f = if label == Label::Preictal { 80.0 } else { 20.0 } + rng.random_range(-4.0..4.0);
        let centre_t = frames as f64 / 2.0 + rng.random_range(-4.0..4.0);
        let amp = cfg.separation * rng.random_range(0.8..1.2);
        let mut data = Vec::with_capacity(cfg.channels * frames * FREQ_BINS);
        for _ in 0..cfg.channels {
            for t in 0..frames {
                for f in 0..FREQ_BINS {
                    let df = (f as f64 - centre_f) / 8.0;
                    let dt = (t as f64 - centre_t) / (frames as f64 / 4.0);
                    let blob = amp * (-0.5 * (df * df + dt * dt)).exp();
                    data.push(1.0 + blob + noise.sample(&mut rng));
                }
            }
        }
        windows.push(LabeledWindow {
            spectrogram: Tensor3::from_vec(cfg.channels, frames, FREQ_BINS, data),
            label,
            synthetic: false,
            source: "toy".into(),
            offset: (i * cfg.window_secs) as f64,
        });
    }
    Dataset::from_windows(meta, windows)
}

/// One seizure in a fixture: `(file index, onset s, duration s)`.
pub type FixtureSeizure = (usize, f64, f64);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EdfFixtureConfig {
    pub patient: String,
    pub files: usize,
    pub minutes_per_file: f64,
    pub channels: usize,
    pub sample_rate: usize,
    pub seizures: Vec<FixtureSeizure>,
    pub seed: u64,
}

impl Default for EdfFixtureConfig {
    fn default() -> Self {
        Self {
            patient: "chb90".into(),
            files: 3,
            minutes_per_file: 20.0,
            channels: 2,
            sample_rate: 256,
            seizures: vec![(2, 900.0, 40.0)],
            seed: 3,
        }
    }
}

pub const FIXTURE_CHANNELS: [&str; 4] = ["FP1-F7", "F7-T7", "T7-P7", "P7-O1"];

fn channel_label(c: usize) -> String {
    FIXTURE_CHANNELS
        .get(c)
        .map(|s| s.to_string())
        .unwrap_or_else(|| format!("CH{}", c + 1))
}

/// A recording with background rhythms, a 20 Hz build-up during the ten
/// minutes before each seizure and a large 5 Hz discharge during it.
pub fn fixture_record(cfg: &EdfFixtureConfig, file: usize) -> EegRecord {
    let fs = cfg.sample_rate;
    let records = (cfg.minutes_per_file * 60.0).round() as usize;
    let n = records * fs;
    let (phys_min, phys_max) = (-800.0, 800.0);
    let signals: Vec<SignalHeader> = (0..cfg.channels)
        .map(|c| SignalHeader::eeg(&channel_label(c), phys_min, phys_max, fs))
        .collect();
    let calibration: Vec<Calibration> = signals
        .iter()
        .map(|s| Calibration::from_header(s).expect("numeric header fields"))
        .collect();
    let seizures: Vec<(f64, f64)> = cfg
        .seizures
        .iter()
        .filter(|s| s.0 == file)
        .map(|s| (s.1, s.1 + s.2))
        .collect();
    let noise = Normal::new(0.0, 8.0).expect("valid sigma");
    let tau = std::f64::consts::TAU;
    let samples = (0..cfg.channels)
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream((file * 64 + c) as u64);
            let phase: f64 = rng.random_range(0.0..tau);
            let cal = calibration[c];
            (0..n)
                .map(|i| {
                    let t = i as f64 / fs as f64;
                    let mut v = 30.0 * (tau * 10.0 * t + phase).sin() + 12.0 * (tau * 3.0 * t).sin();
                    for &(on, off) in &seizures {
                        if t >= on && t < off {
                            v += 300.0 * (tau * 5.0 * t).sin();
                        } else if t < on && t >= on - 600.0 {
                            v += 40.0 * (tau * 20.0 * t + phase).sin();
                        }
                    }
                    v += noise.sample(&mut rng);
                    let d = ((v - cal.offset()) / cal.gain()).round();
                    d.clamp(-32768.0, 32767.0) as i16
                })
                .collect()
        })
        .collect();
    let start = 10 * 3600 + (file as f64 * cfg.minutes_per_file * 60.0).round() as u32;
    EegRecord {
        header: EdfHeader {
            version: "0".into(),
            patient: format!("{} synthetic", cfg.patient),
            recording: format!("fixture file {}", file + 1),
            start_date: "01.01.10".into(),
            start_time: format!("{:02}.{:02}.{:02}", start / 3600 % 24, start / 60 % 60, start % 60),
            reserved: String::new(),
            n_records: records as i64,
            record_duration: "1".into(),
        },
        signals,
        calibration,
        samples,
    }
}

pub fn fixture_file_name(cfg: &EdfFixtureConfig, file: usize) -> String {
    format!("{}_{:02}.edf", cfg.patient, file + 1)
}

/// Summary text for a fixture set.
pub fn fixture_summary(cfg: &EdfFixtureConfig) -> String {
    let mut out = format!(
        "Data Sampling Rate: {} Hz\n*************************\n\n",
        cfg.sample_rate
    );
    out.push_str("Channels in EDF Files:\n**********************\n");
    for c in 0..cfg.channels {
        let _ = writeln!(out, "Channel {}: {}", c + 1, channel_label(c));
    }
    let clock = |s: u32| format!("{:02}:{:02}:{:02}", s / 3600, s / 60 % 60, s % 60);
    let len = (cfg.minutes_per_file * 60.0).round() as u32;
    for f in 0..cfg.files {
        let start = 10 * 3600 + f as u32 * len;
        let mut sz: Vec<&FixtureSeizure> = cfg.seizures.iter().filter(|s| s.0 == f).collect();
        sz.sort_by(|a, b| a.1.total_cmp(&b.1));
        let _ = write!(
            out,
            "\nFile Name: {}\nFile Start Time: {}\nFile End Time: {}\nNumber of Seizures in File: {}\n",
            fixture_file_name(cfg, f),
            clock(start),
            clock(start + len),
            sz.len()
        );
        for (k, s) in sz.iter().enumerate() {
            if sz.len() > 1 {
                let _ = write!(
                    out,
                    "Seizure {n} Start Time: {} seconds\nSeizure {n} End Time: {} seconds\n",
                    s.1,
                    s.1 + s.2,
                    n = k + 1
                );
            } else {
                let _ = write!(
                    out,
                    "Seizure Start Time: {} seconds\nSeizure End Time: {} seconds\n",
                    s.1,
                    s.1 + s.2
                );
            }
        }
    }
    out
}

/// Writes the EDF files and `<patient>-summary.txt` into `dir`; returns their paths.
pub fn write_edf_fixtures(dir: &Path, cfg: &EdfFixtureConfig) -> Result<Vec<PathBuf>, PreprocessError> {
    let mut paths = Vec::new();
    let io_err = |path: &Path| {
        let path = path.display().to_string();
        move |source| PreprocessError::Io { path, source }
    };
    for f in 0..cfg.files {
        let rec = fixture_record(cfg, f);
        let bytes = write_edf(&rec).map_err(|source| PreprocessError::Edf {
            file: fixture_file_name(cfg, f),
            source,
        })?;
        let path = dir.join(fixture_file_name(cfg, f));
        write_atomic(&path, &bytes).map_err(io_err(&path))?;
        paths.push(path);
    }
    let path = dir.join(format!("{}-summary.txt", cfg.patient));
    write_atomic(&path, fixture_summary(cfg).as_bytes()).map_err(io_err(&path))?;
    paths.push(path);
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::preprocess::{parse_annotations, parse_edf};

    #[test]
    fn toy_is_balanced_and_deterministic() {
        let cfg = ToyConfig {
            per_class: 5,
            ..Default::default()
        };
        let a = toy_dataset(&cfg).unwrap();
        assert_eq!(a.len(), 10);
        assert_eq!(a.count(Label::Preictal, None), 5);
        assert_eq!(a.window(0).shape(), (1, 44, 114));
        assert_eq!(toy_dataset(&cfg).unwrap(), a);
    }

    #[test]
    fn fixtures_parse_back() {
        let cfg = EdfFixtureConfig {
            minutes_per_file: 1.0,
            seizures: vec![(1, 10.0, 5.0), (1, 40.0, 8.0)],
            ..Default::default()
        };
        let rec = fixture_record(&cfg, 1);
        let bytes = write_edf(&rec).unwrap();
        let back = parse_edf(&bytes).unwrap();
        assert_eq!(back, rec);
        assert_eq!(back.duration(), 60.0);
        let ann = parse_annotations(&fixture_summary(&cfg)).unwrap();
        assert_eq!(ann.len(), 2);
        assert_eq!((ann[1].onset, ann[1].end), (40.0, 48.0));
        assert_eq!(ann[0].file, "chb90_02.edf");
    }
}
