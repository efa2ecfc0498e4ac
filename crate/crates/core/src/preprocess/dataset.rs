//! Dataset assembly and on-disk layout.
//!
//! A dataset directory holds
//!
//! * `windows.bin`: little-endian binary32 spectrograms, `n × p × 114` each,
//!   back to back in index order;
//! * `index.csv`: `window_id,source_file,offset_seconds,label,synthetic`;
//! * `dataset.toml`: shape and provenance metadata.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::labeling::{
    balance_overlap, label_windows, preictal_spans, select_leading, RecordingSpan, TimedSeizure, WindowClass,
};
use super::stft::Stft;
use super::summary::SummaryFile;
use super::{ClinicalWindows, EegRecord, Label, LabeledWindow, PreprocessError, SeizureAnnotation};
use crate::io::{decode_f32_le, encode_f32_le, write_atomic};
use crate::tensor::Tensor3;

pub const WINDOWS_BIN: &str = "windows.bin";
pub const INDEX_CSV: &str = "index.csv";
pub const DATASET_META: &str = "dataset.toml";
const INDEX_HEADER: &str = "window_id,source_file,offset_seconds,label,synthetic";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub channels: usize,
    pub frames: usize,
    pub freq_bins: usize,
    pub window_secs: usize,
    pub sample_rate: f64,
    /// Overlapped-sampling step for the preictal class, seconds.
    pub step_seconds: f64,
    #[serde(default)]
    pub channel_labels: Vec<String>,
}

impl DatasetMeta {
    pub fn window_len(&self) -> usize {
        self.channels * self.frames * self.freq_bins
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IndexEntry {
    pub id: usize,
    pub source: String,
    pub offset: f64,
    pub label: Label,
    pub synthetic: bool,
}

/// Windows plus their index, held in memory as binary32.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub meta: DatasetMeta,
    pub entries: Vec<IndexEntry>,
    data: Vec<f32>,
}

impl Dataset {
    pub fn new(meta: DatasetMeta) -> Self {
        Self {
            meta,
            entries: Vec::new(),
            data: Vec::new(),
        }
    }

    /// Builds a dataset from rendered windows; ids follow input order.
    pub fn from_windows(meta: DatasetMeta, windows: Vec<LabeledWindow>) -> Result<Self, PreprocessError> {
        let mut ds = Self::new(meta);
        for w in windows {
            ds.push(w)?;
        }
        Ok(ds)
    }

    pub fn push(&mut self, w: LabeledWindow) -> Result<(), PreprocessError> {
        let want = (self.meta.channels, self.meta.frames, self.meta.freq_bins);
        if w.spectrogram.shape() != want {
            return Err(PreprocessError::Dataset {
                path: "<memory>".into(),
                msg: format!("window shape {:?} does not match {want:?}", w.spectrogram.shape()),
            });
        }
        self.entries.push(IndexEntry {
            id: self.entries.len(),
            source: w.source,
            offset: w.offset,
            label: w.label,
            synthetic: w.synthetic,
        });
        self.data.extend(w.spectrogram.data.iter().map(|&v| v as f32));
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// The spectrogram of window `i`.
    pub fn window(&self, i: usize) -> Tensor3 {
        let n = self.meta.window_len();
        let data = self.data[i * n..(i + 1) * n].iter().map(|&v| v as f64).collect();
        Tensor3::from_vec(self.meta.channels, self.meta.frames, self.meta.freq_bins, data)
    }

    pub fn labels(&self) -> Vec<Label> {
        self.entries.iter().map(|e| e.label).collect()
    }

    pub fn synthetic(&self) -> Vec<bool> {
        self.entries.iter().map(|e| e.synthetic).collect()
    }

    pub fn count(&self, label: Label, synthetic: Option<bool>) -> usize {
        self.entries
            .iter()
            .filter(|e| e.label == label && synthetic.is_none_or(|s| e.synthetic == s))
            .count()
    }

    fn index_csv(&self) -> String {
        let mut out = format!("{INDEX_HEADER}\n");
        for e in &self.entries {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                e.id,
                e.source,
                e.offset,
                e.label,
                u8::from(e.synthetic)
            ));
        }
        out
    }

    pub fn save(&self, dir: &Path) -> Result<(), PreprocessError> {
        let write = |name: &str, bytes: &[u8]| {
            let path = dir.join(name);
            write_atomic(&path, bytes).map_err(|source| PreprocessError::Io {
                path: path.display().to_string(),
                source,
            })
        };
        if let Some(e) = self.entries.iter().find(|e| e.source.contains([',', '\n', '"'])) {
            return Err(PreprocessError::Dataset {
                path: dir.display().to_string(),
                msg: format!("source name {:?} cannot be stored in index.csv", e.source),
            });
        }
        let meta = toml::to_string(&self.meta).map_err(|e| PreprocessError::Dataset {
            path: dir.display().to_string(),
            msg: e.to_string(),
        })?;
        write(WINDOWS_BIN, &encode_f32_le(self.data.iter().map(|&v| v as f64)))?;
        write(INDEX_CSV, self.index_csv().as_bytes())?;
        write(DATASET_META, meta.as_bytes())?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, PreprocessError> {
        let read = |name: &str| {
            let path = dir.join(name);
            fs::read(&path).map_err(|source| PreprocessError::Io {
                path: path.display().to_string(),
                source,
            })
        };
        let bad = |name: &str, msg: String| PreprocessError::Dataset {
            path: dir.join(name).display().to_string(),
            msg,
        };
        let meta_text = String::from_utf8(read(DATASET_META)?).map_err(|e| bad(DATASET_META, e.to_string()))?;
        let meta: DatasetMeta = toml::from_str(&meta_text).map_err(|e| bad(DATASET_META, e.to_string()))?;
        let index = String::from_utf8(read(INDEX_CSV)?).map_err(|e| bad(INDEX_CSV, e.to_string()))?;
        let mut lines = index.lines();
        if lines.next().map(str::trim) != Some(INDEX_HEADER) {
            return Err(bad(INDEX_CSV, "missing header".into()));
        }
        let mut entries = Vec::new();
        for (i, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let lineno = i + 2;
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 5 {
                return Err(bad(INDEX_CSV, format!("line {lineno}: expected 5 fields")));
            }
            let id: usize = f[0]
                .parse()
                .map_err(|_| bad(INDEX_CSV, format!("line {lineno}: bad window id")))?;
            if id != entries.len() {
                return Err(bad(
                    INDEX_CSV,
                    format!("line {lineno}: window ids must be 0..n in order"),
                ));
            }
            entries.push(IndexEntry {
                id,
                source: f[1].to_string(),
                offset: f[2]
                    .parse()
                    .map_err(|_| bad(INDEX_CSV, format!("line {lineno}: bad offset")))?,
                label: f[3]
                    .parse()
                    .map_err(|e: String| bad(INDEX_CSV, format!("line {lineno}: {e}")))?,
                synthetic: match f[4].trim() {
                    "0" | "false" => false,
                    "1" | "true" => true,
                    _ => return Err(bad(INDEX_CSV, format!("line {lineno}: bad synthetic flag"))),
                },
            });
        }
        let data: Vec<f32> = decode_f32_le(&read(WINDOWS_BIN)?)
            .map_err(|e| bad(WINDOWS_BIN, e.to_string()))?
            .into_iter()
            .map(|v| v as f32)
            .collect();
        if data.len() != entries.len() * meta.window_len() {
            return Err(bad(
                WINDOWS_BIN,
                format!(
                    "{} values for {} windows of {}",
                    data.len(),
                    entries.len(),
                    meta.window_len()
                ),
            ));
        }
        Ok(Self { meta, entries, data })
    }
}

/// A parsed recording and where it starts on the patient timeline.
#[derive(Debug, Clone)]
pub struct RecordingInput {
    pub name: String,
    pub record: EegRecord,
    /// Seconds from the timeline origin.
    pub start: f64,
}

#[derive(Debug, Clone, Default)]
pub struct BuildOptions {
    pub clinical: ClinicalWindows,
    /// Channel labels to keep, in order; `None` keeps all channels of the first file.
    pub channels: Option<Vec<String>>,
}

/// File start offsets from summary clock times, in listing order; a clock that
/// goes backwards starts a new day.
pub fn timeline_from_summary(files: &[SummaryFile]) -> HashMap<String, f64> {
    let mut out = HashMap::new();
    let mut day = 0u32;
    let mut prev: Option<u32> = None;
    let mut origin: Option<u32> = None;
    for f in files {
        let Some(clock) = f.start_time else { continue };
        // Some summaries write times after midnight as 24:xx, 25:xx, ...
        let clock = clock % 86_400;
        if prev.is_some_and(|p| clock + day * 86_400 < p) {
            day += 1;
        }
        let abs = clock + day * 86_400;
        prev = Some(abs);
        let origin = *origin.get_or_insert(abs);
        out.insert(f.name.clone(), abs as f64 - origin as f64);
    }
    out
}

/// File start offsets from EDF header dates; files without a usable date are
/// placed back to back after the previous one in name order.
pub fn timeline_from_headers(records: &[(String, EegRecord)]) -> HashMap<String, f64> {
    let mut order: Vec<&(String, EegRecord)> = records.iter().collect();
    order.sort_by(|a, b| a.0.cmp(&b.0));
    let origin = order.iter().filter_map(|(_, r)| r.start_datetime()).min();
    let mut out = HashMap::new();
    let mut next = 0.0;
    for (name, rec) in order {
        let start = match (origin, rec.start_datetime()) {
            (Some(o), Some(d)) => (d - o).num_seconds() as f64,
            _ => next,
        };
        next = start + rec.duration();
        out.insert(name.clone(), start);
    }
    out
}

struct Planned {
    file: usize,
    offset: f64,
    label: Label,
    synthetic: bool,
}

/// Labels, balances and renders every window of one patient.
pub fn build_dataset(
    recordings: &[RecordingInput],
    seizures: &[SeizureAnnotation],
    opts: &BuildOptions,
) -> Result<Dataset, PreprocessError> {
    let clinical = &opts.clinical;
    clinical.validate()?;
    let mut recs: Vec<&RecordingInput> = recordings.iter().collect();
    recs.sort_by(|a, b| a.name.cmp(&b.name));
    let first = recs.first().ok_or_else(|| PreprocessError::Dataset {
        path: "<input>".into(),
        msg: "no recordings".into(),
    })?;
    let rate = first.record.sample_rate();
    if !(rate.fract() == 0.0 && rate > 0.0) {
        return Err(PreprocessError::InvalidSampleRate(rate));
    }
    let fs = rate as usize;
    let stft = Stft::new(fs)?;
    for r in &recs {
        if r.record.sample_rate() != rate {
            return Err(PreprocessError::Edf {
                file: r.name.clone(),
                source: super::EdfError::MixedSampleRates {
                    first: fs,
                    other: r.record.sample_rate() as usize,
                },
            });
        }
    }
    let labels: Vec<String> = match &opts.channels {
        Some(l) => l.clone(),
        None => first.record.signals.iter().map(|s| s.label.clone()).collect(),
    };
    let channel_map: Vec<Vec<usize>> = recs
        .iter()
        .map(|r| {
            labels
                .iter()
                .map(|l| {
                    r.record
                        .channel_index(l)
                        .ok_or_else(|| PreprocessError::MissingChannel {
                            file: r.name.clone(),
                            label: l.clone(),
                        })
                })
                .collect()
        })
        .collect::<Result<_, _>>()?;

    let by_name: HashMap<&str, usize> = recs.iter().enumerate().map(|(i, r)| (r.name.as_str(), i)).collect();
    let mut timed: Vec<TimedSeizure> = seizures
        .iter()
        .map(|a| {
            let i = *by_name
                .get(a.file.as_str())
                .ok_or_else(|| PreprocessError::UnknownFile(a.file.clone()))?;
            Ok(TimedSeizure::from_annotation(a, recs[i].start))
        })
        .collect::<Result<_, PreprocessError>>()?;
    timed.sort_by(|a, b| a.onset.total_cmp(&b.onset));
    let leading = select_leading(&timed, clinical.sop_minutes);

    let spans: Vec<RecordingSpan> = recs
        .iter()
        .enumerate()
        .map(|(i, r)| RecordingSpan {
            file: i,
            start: r.start,
            duration: r.record.duration(),
        })
        .collect();
    let t = clinical.window_secs as f64;
    let slots = label_windows(&spans, &leading, &timed, clinical);
    let mut plan: Vec<Planned> = slots
        .iter()
        .filter(|s| s.class == WindowClass::Interictal)
        .map(|s| Planned {
            file: s.file,
            offset: s.offset,
            label: Label::Interictal,
            synthetic: false,
        })
        .collect();
    let n_interictal = plan.len();
    let pre = preictal_spans(&slots, t);
    let durations: Vec<f64> = pre.iter().map(|p| p.duration).collect();
    let balance = balance_overlap(&durations, n_interictal.max(1), t, rate);
    plan.extend(balance.windows.iter().map(|w| Planned {
        file: pre[w.span].file,
        offset: pre[w.span].offset + w.offset,
        label: Label::Preictal,
        synthetic: w.synthetic,
    }));
    plan.sort_by(|a, b| {
        a.file
            .cmp(&b.file)
            .then(a.offset.total_cmp(&b.offset))
            .then(a.label.cmp(&b.label))
    });

    let window_samples = clinical.window_secs * fs;
    let rendered: Vec<LabeledWindow> = plan
        .par_iter()
        .map(|p| {
            let rec = &recs[p.file].record;
            let start = (p.offset * rate).round() as usize;
            let channels: Vec<Vec<f64>> = channel_map[p.file]
                .iter()
                .map(|&c| {
                    let cal = rec.calibration[c];
                    rec.samples[c][start..start + window_samples]
                        .iter()
                        .map(|&d| cal.to_physical(d))
                        .collect()
                })
                .collect();
            Ok(LabeledWindow {
                spectrogram: stft.spectrogram(&channels, clinical.window_secs)?,
                label: p.label,
                synthetic: p.synthetic,
                source: recs[p.file].name.clone(),
                offset: p.offset,
            })
        })
        .collect::<Result<_, PreprocessError>>()?;

    let meta = DatasetMeta {
        channels: labels.len(),
        frames: stft.frames(clinical.window_secs),
        freq_bins: super::retained_bins().len(),
        window_secs: clinical.window_secs,
        sample_rate: rate,
        step_seconds: balance.step,
        channel_labels: labels,
    };
    Dataset::from_windows(meta, rendered)
}
