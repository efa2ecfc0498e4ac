//! Seizure summary text, in the `chbNN-summary.txt` layout:
//!
//! ```text
//! File Name: chb01_03.edf
//! File Start Time: 13:43:04
//! File End Time: 14:43:04
//! Number of Seizures in File: 1
//! Seizure Start Time: 2996 seconds
//! Seizure End Time: 3036 seconds
//! ```
//!
//! Numbered variants (`Seizure 1 Start Time:`) are accepted too.

use thiserror::Error;

use super::SeizureAnnotation;

#[derive(Debug, Error, Clone, PartialEq)]
#[error("summary line {line}: {msg}")]
pub struct SummaryError {
    pub line: usize,
    pub msg: String,
}

/// One `File Name:` block.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SummaryFile {
    pub name: String,
    /// Wall-clock start as seconds since midnight; hours may exceed 23.
    pub start_time: Option<u32>,
    pub end_time: Option<u32>,
    pub declared_seizures: Option<usize>,
    pub seizures: Vec<(f64, f64)>,
}

fn err(line: usize, msg: impl Into<String>) -> SummaryError {
    SummaryError { line, msg: msg.into() }
}

fn parse_clock(text: &str) -> Option<u32> {
    let parts: Vec<u32> = text
        .trim()
        .split(':')
        .map(|p| p.trim().parse().ok())
        .collect::<Option<_>>()?;
    match parts.as_slice() {
        [h, m, s] if *m < 60 && *s < 60 => Some(h * 3600 + m * 60 + s),
        _ => None,
    }
}

fn parse_seconds(text: &str) -> Option<f64> {
    let t = text.trim();
    let t = t.strip_suffix("seconds").or_else(|| t.strip_suffix("sec")).unwrap_or(t);
    t.trim().parse().ok().filter(|v: &f64| v.is_finite() && *v >= 0.0)
}

enum SeizureField {
    Start,
    End,
}

fn seizure_line(key: &str) -> Option<SeizureField> {
    let mut words = key.split_whitespace();
    if words.next()? != "Seizure" {
        return None;
    }
    let mut rest: Vec<&str> = words.collect();
    if rest.first().is_some_and(|w| w.chars().all(|c| c.is_ascii_digit())) {
        rest.remove(0);
    }
    match rest.as_slice() {
        ["Start", "Time"] => Some(SeizureField::Start),
        ["End", "Time"] => Some(SeizureField::End),
        _ => None,
    }
}

/// Parses every file block in a summary.
pub fn parse_summary(text: &str) -> Result<Vec<SummaryFile>, SummaryError> {
    let mut files: Vec<SummaryFile> = Vec::new();
    let mut pending: Option<(f64, usize)> = None;
    let close = |files: &[SummaryFile], pending: &Option<(f64, usize)>, line: usize| -> Result<(), SummaryError> {
        if let Some((_, l)) = pending {
            return Err(err(*l, "seizure start time without matching end time"));
        }
        if let Some(f) = files.last() {
            if let Some(d) = f.declared_seizures {
                if d != f.seizures.len() {
                    return Err(err(
                        line,
                        format!("{} declares {d} seizures but lists {}", f.name, f.seizures.len()),
                    ));
                }
            }
        }
        Ok(())
    };
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let Some((key, value)) = raw.split_once(':') else {
            continue;
        };
        let key = key.trim();
        if key == "File Name" {
            close(&files, &pending, line)?;
            files.push(SummaryFile {
                name: value.trim().to_string(),
                ..Default::default()
            });
            continue;
        }
        if let Some(kind) = seizure_line(key) {
            let file = files
                .last_mut()
                .ok_or_else(|| err(line, "seizure time outside a file block"))?;
            let secs =
                parse_seconds(value).ok_or_else(|| err(line, format!("malformed seizure time {:?}", value.trim())))?;
            match kind {
                SeizureField::Start => {
                    if let Some((_, l)) = pending {
                        return Err(err(l, "seizure start time without matching end time"));
                    }
                    pending = Some((secs, line));
                }
                SeizureField::End => {
                    let (start, _) = pending
                        .take()
                        .ok_or_else(|| err(line, "seizure end time without start time"))?;
                    if secs <= start {
                        return Err(err(
                            line,
                            format!("seizure ends at {secs} s, not after its start {start} s"),
                        ));
                    }
                    file.seizures.push((start, secs));
                }
            }
            continue;
        }
        let Some(file) = files.last_mut() else {
            continue;
        };
        match key {
            "File Start Time" => {
                file.start_time = Some(parse_clock(value).ok_or_else(|| err(line, "malformed file start time"))?);
            }
            "File End Time" => {
                file.end_time = Some(parse_clock(value).ok_or_else(|| err(line, "malformed file end time"))?);
            }
            "Number of Seizures in File" => {
                file.declared_seizures = Some(value.trim().parse().map_err(|_| err(line, "malformed seizure count"))?);
            }
            _ => {}
        }
    }
    close(&files, &pending, text.lines().count())?;
    Ok(files)
}

/// Flat list of seizures, ordered by file then onset.
pub fn parse_annotations(text: &str) -> Result<Vec<SeizureAnnotation>, SummaryError> {
    let mut out: Vec<SeizureAnnotation> = parse_summary(text)?
        .into_iter()
        .flat_map(|f| {
            let name = f.name;
            f.seizures.into_iter().map(move |(onset, end)| SeizureAnnotation {
                file: name.clone(),
                onset,
                end,
            })
        })
        .collect();
    out.sort_by(|a, b| a.file.cmp(&b.file).then(a.onset.total_cmp(&b.onset)));
    Ok(out)
}
