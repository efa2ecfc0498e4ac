//! EEG ingestion and spectrogram dataset construction.
//!
//! Pipeline: EDF recordings and a seizure summary are placed on a common
//! timeline, seizures that closely follow another are dropped, fixed-length
//! windows are labelled preictal / interictal / excluded, the preictal class is
//! oversampled with overlapping windows to match the interictal count, and each
//! window becomes an `n × 2t × 114` log-magnitude spectrogram.

mod dataset;
mod edf;
mod labeling;
mod stft;
mod summary;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::Tensor3;

pub use dataset::{
    build_dataset, timeline_from_headers, timeline_from_summary, BuildOptions, Dataset, DatasetMeta, IndexEntry,
    RecordingInput, DATASET_META, INDEX_CSV, WINDOWS_BIN,
};
pub use edf::{format_field_number, parse_edf, write_edf, Calibration, EdfError, EdfHeader, EegRecord, SignalHeader};
pub use labeling::{
    balance_overlap, classify_window, label_windows, preictal_spans, select_leading, Balance, BalancedWindow,
    PreictalSpan, RecordingSpan, TimedSeizure, WindowClass, WindowSlot,
};
pub use stft::{retained_bins, spectrogram, Stft, MAX_FREQ_HZ, NOTCH_BANDS};
pub use summary::{parse_annotations, parse_summary, SummaryError, SummaryFile};

#[derive(Debug, Error)]
pub enum PreprocessError {
    #[error("{file}: {source}")]
    Edf {
        file: String,
        #[source]
        source: EdfError,
    },
    #[error(transparent)]
    Summary(#[from] SummaryError),
    #[error("window has {got} samples, expected {expected}")]
    WrongLength { expected: usize, got: usize },
    #[error("unsupported sample rate {0} Hz (need an even integer rate of at least 256 Hz)")]
    InvalidSampleRate(f64),
    #[error("invalid clinical windows: {0}")]
    InvalidClinical(String),
    #[error("{file}: channel {label:?} not found")]
    MissingChannel { file: String, label: String },
    #[error("annotation refers to unknown file {0}")]
    UnknownFile(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("dataset {path}: {msg}")]
    Dataset { path: String, msg: String },
}

/// One annotated seizure, in seconds from its file's start.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeizureAnnotation {
    pub file: String,
    pub onset: f64,
    pub end: f64,
}

/// Clinical timing parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClinicalWindows {
    /// Seizure occurrence period, minutes.
    pub sop_minutes: f64,
    /// Seizure prediction horizon, minutes.
    pub sph_minutes: f64,
    /// Window length, seconds.
    pub window_secs: usize,
    pub interictal_guard_hours: f64,
}

impl Default for ClinicalWindows {
    fn default() -> Self {
        Self {
            sop_minutes: 30.0,
            sph_minutes: 35.0,
            window_secs: 30,
            interictal_guard_hours: 4.0,
        }
    }
}

impl ClinicalWindows {
    pub fn validate(&self) -> Result<(), PreprocessError> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        if !ok(self.sop_minutes) || !ok(self.sph_minutes) || !ok(self.interictal_guard_hours) || self.window_secs == 0 {
            return Err(PreprocessError::InvalidClinical(format!(
                "{self:?}: all values must be positive"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Interictal,
    Preictal,
}

impl Label {
    /// Class index: interictal 0, preictal 1.
    pub fn index(self) -> usize {
        match self {
            Self::Interictal => 0,
            Self::Preictal => 1,
        }
    }

    pub fn from_index(i: usize) -> Option<Self> {
        match i {
            0 => Some(Self::Interictal),
            1 => Some(Self::Preictal),
            _ => None,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Interictal => "interictal",
            Self::Preictal => "preictal",
        })
    }
}

impl FromStr for Label {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "interictal" | "0" => Ok(Self::Interictal),
            "preictal" | "1" => Ok(Self::Preictal),
            other => Err(format!("unknown label {other:?}")),
        }
    }
}

/// A rendered training/evaluation window.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledWindow {
    pub spectrogram: Tensor3,
    pub label: Label,
    pub synthetic: bool,
    pub source: String,
    /// Offset from the start of `source`, seconds.
    pub offset: f64,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn label_text() {
        for l in [Label::Interictal, Label::Preictal] {
            assert_eq!(l.to_string().parse::<Label>().unwrap(), l);
            assert_eq!(Label::from_index(l.index()), Some(l));
        }
        assert!("ictal".parse::<Label>().is_err());
    }

    #[test]
    fn clinical_defaults_validate() {
        ClinicalWindows::default().validate().unwrap();
        let bad = ClinicalWindows {
            sph_minutes: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
