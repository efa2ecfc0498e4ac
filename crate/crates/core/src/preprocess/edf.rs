//! European Data Format reader and writer.
//!
//! Header fields are fixed-width, space-padded ASCII; data records hold
//! little-endian two's-complement 16-bit samples, signal after signal.
//! Fields are kept as their text representation so that reading and writing a
//! well-formed file is byte-exact.

use chrono::{NaiveDate, NaiveDateTime, NaiveTime};
use thiserror::Error;

const FIXED_HEADER: usize = 256;
const SIGNAL_HEADER: usize = 256;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EdfError {
    #[error("truncated EDF: needed {needed} bytes at offset {offset}, file has {len}")]
    Truncated { offset: usize, needed: usize, len: usize },
    #[error("bad EDF field {field} at byte {offset}: {text:?}")]
    BadField {
        offset: usize,
        field: &'static str,
        text: String,
    },
    #[error("EDF header declares {declared} data records but payload at byte {offset} holds {actual:.3}")]
    InconsistentRecords { offset: usize, declared: i64, actual: f64 },
    #[error("signal {signal} ({label}) has zero digital range (header byte {offset})")]
    ZeroDigitalRange {
        signal: usize,
        label: String,
        offset: usize,
    },
    #[error("signals have different sampling rates ({first} vs {other} samples per record)")]
    MixedSampleRates { first: usize, other: usize },
    #[error("value {value:?} does not fit the {width}-byte field {field}")]
    FieldOverflow {
        field: &'static str,
        width: usize,
        value: String,
    },
}

/// Recording-level header fields.
#[derive(Debug, Clone, PartialEq)]
pub struct EdfHeader {
    pub version: String,
    pub patient: String,
    pub recording: String,
    /// `dd.mm.yy`
    pub start_date: String,
    /// `hh.mm.ss`
    pub start_time: String,
    pub reserved: String,
    pub n_records: i64,
    /// Text of the record-duration field, seconds.
    pub record_duration: String,
}

/// Per-signal header fields.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalHeader {
    pub label: String,
    pub transducer: String,
    pub physical_dimension: String,
    pub physical_min: String,
    pub physical_max: String,
    pub digital_min: String,
    pub digital_max: String,
    pub prefilter: String,
    pub samples_per_record: usize,
    pub reserved: String,
}

/// Linear digital-to-physical calibration of one signal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Calibration {
    pub physical_min: f64,
    pub physical_max: f64,
    pub digital_min: f64,
    pub digital_max: f64,
}

impl Calibration {
    pub fn gain(&self) -> f64 {
        (self.physical_max - self.physical_min) / (self.digital_max - self.digital_min)
    }

    pub fn offset(&self) -> f64 {
        self.physical_max - self.gain() * self.digital_max
    }

    pub fn to_physical(&self, digital: i16) -> f64 {
        digital as f64 * self.gain() + self.offset()
    }
}

/// A decoded EDF recording.
#[derive(Debug, Clone, PartialEq)]
pub struct EegRecord {
    pub header: EdfHeader,
    pub signals: Vec<SignalHeader>,
    pub calibration: Vec<Calibration>,
    /// Raw digital samples per signal, all records concatenated.
    pub samples: Vec<Vec<i16>>,
}

fn field(bytes: &[u8], offset: usize, width: usize) -> String {
    String::from_utf8_lossy(&bytes[offset..offset + width])
        .trim_end()
        .to_string()
}

fn parse_num<T: std::str::FromStr>(text: &str, offset: usize, name: &'static str) -> Result<T, EdfError> {
    text.trim().parse().map_err(|_| EdfError::BadField {
        offset,
        field: name,
        text: text.to_string(),
    })
}

fn need(bytes: &[u8], offset: usize, needed: usize) -> Result<(), EdfError> {
    if bytes.len() < offset + needed {
        Err(EdfError::Truncated {
            offset,
            needed,
            len: bytes.len(),
        })
    } else {
        Ok(())
    }
}

/// Decodes an EDF byte stream.
pub fn parse_edf(bytes: &[u8]) -> Result<EegRecord, EdfError> {
    need(bytes, 0, FIXED_HEADER)?;
    let ns_text = field(bytes, 252, 4);
    let ns: usize = parse_num(&ns_text, 252, "number of signals")?;
    let header_bytes_text = field(bytes, 184, 8);
    let header_bytes: usize = parse_num(&header_bytes_text, 184, "header bytes")?;
    if header_bytes != FIXED_HEADER + SIGNAL_HEADER * ns {
        return Err(EdfError::BadField {
            offset: 184,
            field: "header bytes",
            text: header_bytes_text,
        });
    }
    need(bytes, FIXED_HEADER, SIGNAL_HEADER * ns)?;
    let n_records_text = field(bytes, 236, 8);
    let header = EdfHeader {
        version: field(bytes, 0, 8),
        patient: field(bytes, 8, 80),
        recording: field(bytes, 88, 80),
        start_date: field(bytes, 168, 8),
        start_time: field(bytes, 176, 8),
        reserved: field(bytes, 192, 44),
        n_records: parse_num(&n_records_text, 236, "number of data records")?,
        record_duration: field(bytes, 244, 8),
    };
    let _: f64 = parse_num(&header.record_duration, 244, "record duration")?;

    // Signal fields are stored field-major: all labels, then all transducers, ...
    let widths: [usize; 10] = [16, 80, 8, 8, 8, 8, 8, 80, 8, 32];
    let mut starts = [0usize; 10];
    let mut acc = FIXED_HEADER;
    for (s, w) in starts.iter_mut().zip(widths) {
        *s = acc;
        acc += w * ns;
    }
    let sig_field = |k: usize, i: usize| {
        let off = starts[k] + widths[k] * i;
        (field(bytes, off, widths[k]), off)
    };
    let mut signals = Vec::with_capacity(ns);
    let mut calibration = Vec::with_capacity(ns);
    for i in 0..ns {
        let (spr_text, spr_off) = sig_field(8, i);
        let sig = SignalHeader {
            label: sig_field(0, i).0,
            transducer: sig_field(1, i).0,
            physical_dimension: sig_field(2, i).0,
            physical_min: sig_field(3, i).0,
            physical_max: sig_field(4, i).0,
            digital_min: sig_field(5, i).0,
            digital_max: sig_field(6, i).0,
            prefilter: sig_field(7, i).0,
            samples_per_record: parse_num(&spr_text, spr_off, "samples per record")?,
            reserved: sig_field(9, i).0,
        };
        let cal = Calibration {
            physical_min: parse_num(&sig.physical_min, sig_field(3, i).1, "physical minimum")?,
            physical_max: parse_num(&sig.physical_max, sig_field(4, i).1, "physical maximum")?,
            digital_min: parse_num(&sig.digital_min, sig_field(5, i).1, "digital minimum")?,
            digital_max: parse_num(&sig.digital_max, sig_field(6, i).1, "digital maximum")?,
        };
        if cal.digital_max == cal.digital_min {
            return Err(EdfError::ZeroDigitalRange {
                signal: i,
                label: sig.label.clone(),
                offset: sig_field(5, i).1,
            });
        }
        signals.push(sig);
        calibration.push(cal);
    }
    if let Some(first) = signals.first() {
        if let Some(other) = signals
            .iter()
            .find(|s| s.samples_per_record != first.samples_per_record)
        {
            return Err(EdfError::MixedSampleRates {
                first: first.samples_per_record,
                other: other.samples_per_record,
            });
        }
    }

    let record_len: usize = signals.iter().map(|s| s.samples_per_record * 2).sum();
    let payload = bytes.len() - header_bytes;
    let n_records = if header.n_records < 0 {
        if record_len == 0 || !payload.is_multiple_of(record_len) {
            return Err(EdfError::InconsistentRecords {
                offset: header_bytes,
                declared: header.n_records,
                actual: payload as f64 / record_len.max(1) as f64,
            });
        }
        payload / record_len
    } else {
        let declared = header.n_records as usize;
        let expected = declared * record_len;
        if payload < expected {
            return Err(EdfError::Truncated {
                offset: header_bytes,
                needed: expected,
                len: bytes.len(),
            });
        }
        if payload > expected {
            return Err(EdfError::InconsistentRecords {
                offset: header_bytes + expected,
                declared: header.n_records,
                actual: payload as f64 / record_len.max(1) as f64,
            });
        }
        declared
    };

    let mut samples: Vec<Vec<i16>> = signals
        .iter()
        .map(|s| Vec::with_capacity(s.samples_per_record * n_records))
        .collect();
    let mut pos = header_bytes;
    for _ in 0..n_records {
        for (sig, out) in signals.iter().zip(samples.iter_mut()) {
            for _ in 0..sig.samples_per_record {
                out.push(i16::from_le_bytes([bytes[pos], bytes[pos + 1]]));
                pos += 2;
            }
        }
    }
    Ok(EegRecord {
        header,
        signals,
        calibration,
        samples,
    })
}

fn put(out: &mut Vec<u8>, value: &str, width: usize, name: &'static str) -> Result<(), EdfError> {
    if value.len() > width || !value.is_ascii() {
        return Err(EdfError::FieldOverflow {
            field: name,
            width,
            value: value.to_string(),
        });
    }
    out.extend_from_slice(value.as_bytes());
    out.extend(std::iter::repeat_n(b' ', width - value.len()));
    Ok(())
}

/// Encodes a recording; the record count written is the one implied by the samples.
pub fn write_edf(rec: &EegRecord) -> Result<Vec<u8>, EdfError> {
    let ns = rec.signals.len();
    let n_records = rec.n_records();
    let mut out = Vec::with_capacity(FIXED_HEADER + SIGNAL_HEADER * ns);
    let h = &rec.header;
    put(&mut out, &h.version, 8, "version")?;
    put(&mut out, &h.patient, 80, "patient")?;
    put(&mut out, &h.recording, 80, "recording")?;
    put(&mut out, &h.start_date, 8, "start date")?;
    put(&mut out, &h.start_time, 8, "start time")?;
    put(
        &mut out,
        &(FIXED_HEADER + SIGNAL_HEADER * ns).to_string(),
        8,
        "header bytes",
    )?;
    put(&mut out, &h.reserved, 44, "reserved")?;
    put(&mut out, &n_records.to_string(), 8, "number of data records")?;
    put(&mut out, &h.record_duration, 8, "record duration")?;
    put(&mut out, &ns.to_string(), 4, "number of signals")?;
    type Getter = fn(&SignalHeader) -> String;
    let fields: [(Getter, usize, &'static str); 10] = [
        (|s| s.label.clone(), 16, "label"),
        (|s| s.transducer.clone(), 80, "transducer"),
        (|s| s.physical_dimension.clone(), 8, "physical dimension"),
        (|s| s.physical_min.clone(), 8, "physical minimum"),
        (|s| s.physical_max.clone(), 8, "physical maximum"),
        (|s| s.digital_min.clone(), 8, "digital minimum"),
        (|s| s.digital_max.clone(), 8, "digital maximum"),
        (|s| s.prefilter.clone(), 80, "prefilter"),
        (|s| s.samples_per_record.to_string(), 8, "samples per record"),
        (|s| s.reserved.clone(), 32, "signal reserved"),
    ];
    for (get, width, name) in fields {
        for s in &rec.signals {
            put(&mut out, &get(s), width, name)?;
        }
    }
    for r in 0..n_records {
        for (sig, data) in rec.signals.iter().zip(&rec.samples) {
            let spr = sig.samples_per_record;
            for v in &data[r * spr..(r + 1) * spr] {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    Ok(out)
}

impl EegRecord {
    pub fn channels(&self) -> usize {
        self.signals.len()
    }

    pub fn record_duration(&self) -> f64 {
        self.header.record_duration.trim().parse().unwrap_or(1.0)
    }

    /// Samples per second.
    pub fn sample_rate(&self) -> f64 {
        self.signals
            .first()
            .map(|s| s.samples_per_record as f64 / self.record_duration())
            .unwrap_or(0.0)
    }

    pub fn n_records(&self) -> usize {
        match (self.signals.first(), self.samples.first()) {
            (Some(s), Some(d)) if s.samples_per_record > 0 => d.len() / s.samples_per_record,
            _ => 0,
        }
    }

    pub fn duration(&self) -> f64 {
        self.n_records() as f64 * self.record_duration()
    }

    /// Physical values of one channel.
    pub fn physical(&self, channel: usize) -> Vec<f64> {
        let cal = self.calibration[channel];
        self.samples[channel].iter().map(|&d| cal.to_physical(d)).collect()
    }

    /// Recording start from the `dd.mm.yy` / `hh.mm.ss` header fields. Years
    /// 85–99 map to 19xx, the rest to 20xx.
    pub fn start_datetime(&self) -> Option<NaiveDateTime> {
        let d: Vec<u32> = self
            .header
            .start_date
            .split('.')
            .map(|p| p.trim().parse().ok())
            .collect::<Option<_>>()?;
        let t: Vec<u32> = self
            .header
            .start_time
            .split('.')
            .map(|p| p.trim().parse().ok())
            .collect::<Option<_>>()?;
        if d.len() != 3 || t.len() != 3 {
            return None;
        }
        let year = if d[2] >= 85 { 1900 + d[2] } else { 2000 + d[2] } as i32;
        let date = NaiveDate::from_ymd_opt(year, d[1], d[0])?;
        let time = NaiveTime::from_hms_opt(t[0], t[1], t[2])?;
        Some(NaiveDateTime::new(date, time))
    }

    /// Index of the first signal with the given label.
    pub fn channel_index(&self, label: &str) -> Option<usize> {
        self.signals.iter().position(|s| s.label == label)
    }
}

/// Formats `v` into at most 8 characters, as EDF numeric fields require.
pub fn format_field_number(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e7 {
        return format!("{}", v as i64);
    }
    for prec in (0..=7).rev() {
        let s = format!("{v:.prec$}");
        if s.len() <= 8 {
            return s;
        }
    }
    format!("{}", v.round() as i64)
}

impl SignalHeader {
    /// A channel header with standard 16-bit digital range.
    pub fn eeg(label: &str, physical_min: f64, physical_max: f64, samples_per_record: usize) -> Self {
        Self {
            label: label.to_string(),
            transducer: String::new(),
            physical_dimension: "uV".into(),
            physical_min: format_field_number(physical_min),
            physical_max: format_field_number(physical_max),
            digital_min: "-32768".into(),
            digital_max: "32767".into(),
            prefilter: String::new(),
            samples_per_record,
            reserved: String::new(),
        }
    }
}

impl Calibration {
    pub fn from_header(sig: &SignalHeader) -> Option<Self> {
        Some(Self {
            physical_min: sig.physical_min.trim().parse().ok()?,
            physical_max: sig.physical_max.trim().parse().ok()?,
            digital_min: sig.digital_min.trim().parse().ok()?,
            digital_max: sig.digital_max.trim().parse().ok()?,
        })
    }
}
