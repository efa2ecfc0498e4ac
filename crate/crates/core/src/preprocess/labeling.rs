//! Seizure selection, window labelling and overlapped preictal sampling.
//!
//! All times here are seconds on one timeline shared by every recording of a
//! patient.

use serde::{Deserialize, Serialize};

use super::{ClinicalWindows, Label, SeizureAnnotation};

/// A seizure placed on the shared timeline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimedSeizure {
    pub onset: f64,
    pub end: f64,
}

impl TimedSeizure {
    pub fn from_annotation(a: &SeizureAnnotation, file_start: f64) -> Self {
        Self {
            onset: file_start + a.onset,
            end: file_start + a.end,
        }
    }
}

/// A contiguous recording on the timeline.
#[derive(Debug, Clone, PartialEq)]
pub struct RecordingSpan {
    /// Index of the source file.
    pub file: usize,
    pub start: f64,
    pub duration: f64,
}

/// Outcome of labelling one window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum WindowClass {
    Preictal,
    Interictal,
    Excluded,
}

impl WindowClass {
    pub fn label(self) -> Option<Label> {
        match self {
            Self::Preictal => Some(Label::Preictal),
            Self::Interictal => Some(Label::Interictal),
            Self::Excluded => None,
        }
    }
}

/// Keeps a seizure iff no earlier seizure (kept or not) ended within
/// `sop_minutes` before its onset. Input must be time-ordered.
pub fn select_leading(seizures: &[TimedSeizure], sop_minutes: f64) -> Vec<TimedSeizure> {
    let gap = sop_minutes * 60.0;
    let mut last_end: Option<f64> = None;
    let mut out = Vec::new();
    for s in seizures {
        let leading = match last_end {
            Some(e) => s.onset - e > gap,
            None => true,
        };
        if leading {
            out.push(*s);
        }
        last_end = Some(last_end.map_or(s.end, |e| e.max(s.end)));
    }
    out
}

fn overlaps(a0: f64, a1: f64, b0: f64, b1: f64) -> bool {
    a0 < b1 && b0 < a1
}

/// Labels the window `[start, end)`.
///
/// Preictal: inside `[onset − SPH − SOP, onset − SPH]` of a leading seizure and
/// clear of every seizure's `(onset − SPH, end]`. Excluded: intersects any
/// seizure's `(onset − SPH − SOP − guard, end + guard)`. Everything else is
/// interictal.
pub fn classify_window(
    start: f64,
    end: f64,
    leading: &[TimedSeizure],
    all: &[TimedSeizure],
    clinical: &ClinicalWindows,
) -> WindowClass {
    let sph = clinical.sph_minutes * 60.0;
    let sop = clinical.sop_minutes * 60.0;
    let guard = clinical.interictal_guard_hours * 3600.0;
    let clear_of_ictal = all
        .iter()
        .chain(leading)
        .all(|s| !overlaps(start, end, s.onset - sph, s.end));
    if clear_of_ictal
        && leading
            .iter()
            .any(|s| start >= s.onset - sph - sop && end <= s.onset - sph)
    {
        return WindowClass::Preictal;
    }
    let near = all
        .iter()
        .chain(leading)
        .any(|s| overlaps(start, end, s.onset - sph - sop - guard, s.end + guard));
    if near {
        WindowClass::Excluded
    } else {
        WindowClass::Interictal
    }
}

/// A labelled but not yet rendered window.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowSlot {
    pub file: usize,
    /// Offset from the start of the file, seconds.
    pub offset: f64,
    pub class: WindowClass,
}

/// Tiles each recording at stride `t` and labels every window.
pub fn label_windows(
    spans: &[RecordingSpan],
    leading: &[TimedSeizure],
    all: &[TimedSeizure],
    clinical: &ClinicalWindows,
) -> Vec<WindowSlot> {
    let t = clinical.window_secs as f64;
    let mut out = Vec::new();
    for span in spans {
        let count = (span.duration / t + 1e-9).floor() as usize;
        for k in 0..count {
            let offset = k as f64 * t;
            let start = span.start + offset;
            out.push(WindowSlot {
                file: span.file,
                offset,
                class: classify_window(start, start + t, leading, all, clinical),
            });
        }
    }
    out
}

/// A contiguous run of preictal signal inside one file.
#[derive(Debug, Clone, PartialEq)]
pub struct PreictalSpan {
    pub file: usize,
    /// Offset from the start of the file, seconds.
    pub offset: f64,
    pub duration: f64,
}

/// Merges adjacent preictal slots (same file, consecutive offsets) into spans.
pub fn preictal_spans(slots: &[WindowSlot], t: f64) -> Vec<PreictalSpan> {
    let mut out: Vec<PreictalSpan> = Vec::new();
    for s in slots.iter().filter(|s| s.class == WindowClass::Preictal) {
        match out.last_mut() {
            Some(last) if last.file == s.file && (last.offset + last.duration - s.offset).abs() < 1e-6 => {
                last.duration += t;
            }
            _ => out.push(PreictalSpan {
                file: s.file,
                offset: s.offset,
                duration: t,
            }),
        }
    }
    out
}

/// One window produced by [`balance_overlap`].
#[derive(Debug, Clone, PartialEq)]
pub struct BalancedWindow {
    /// Index into the span list.
    pub span: usize,
    /// Offset inside the span, seconds (on the sample grid).
    pub offset: f64,
    pub synthetic: bool,
}

/// Result of overlapped sampling.
#[derive(Debug, Clone, PartialEq)]
pub struct Balance {
    /// Step between consecutive windows, seconds.
    pub step: f64,
    pub windows: Vec<BalancedWindow>,
}

/// Slides a `t`-second window over the concatenated spans at step
/// `S = (D − t)/(n − 1)` so that about `n_interictal` windows come out.
///
/// Offsets are snapped to the sample grid; a window that would straddle two
/// spans is moved to the end of the span it starts in. Windows whose in-span
/// offset is not a multiple of `t` are synthetic. The step never drops below
/// one sample.
pub fn balance_overlap(spans: &[f64], n_interictal: usize, t: f64, sample_rate: f64) -> Balance {
    let usable: Vec<(usize, f64)> = spans.iter().copied().enumerate().filter(|&(_, d)| d >= t).collect();
    let total: f64 = usable.iter().map(|&(_, d)| d).sum();
    if usable.is_empty() {
        return Balance {
            step: t,
            windows: Vec::new(),
        };
    }
    let sample = 1.0 / sample_rate;
    let (step, count) = if total <= t || n_interictal <= 1 {
        (t, 1)
    } else {
        let s = (total - t) / (n_interictal - 1) as f64;
        if s < sample {
            (sample, ((total - t) * sample_rate + 1e-9).floor() as usize + 1)
        } else {
            (s, n_interictal)
        }
    };
    let snap = |x: f64| (x * sample_rate).round() / sample_rate;
    let is_multiple = |x: f64| {
        let r = x / t - (x / t).round();
        (r * t).abs() < 0.5 * sample
    };
    let mut windows = Vec::with_capacity(count);
    let mut cursor = 0usize;
    let mut span_start = 0.0;
    for i in 0..count {
        let virtual_offset = snap(i as f64 * step).min(total - t);
        while cursor + 1 < usable.len() && virtual_offset >= span_start + usable[cursor].1 {
            span_start += usable[cursor].1;
            cursor += 1;
        }
        let (index, duration) = usable[cursor];
        let mut offset = snap(virtual_offset - span_start).max(0.0);
        if offset + t > duration {
            offset = ((duration - t) * sample_rate).floor() / sample_rate;
        }
        windows.push(BalancedWindow {
            span: index,
            offset,
            synthetic: !is_multiple(offset),
        });
    }
    Balance { step, windows }
}
