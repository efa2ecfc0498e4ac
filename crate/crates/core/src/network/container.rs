//! Weight container: a directory holding `manifest` and `weights.bin`.
//!
//! `manifest` is line-oriented text:
//!
//! ```text
//! xbarsim-weights 1
//! spec channels=22 frames=60 freq_bins=114
//! tensor conv1.weight 16,22,5,5 176
//! ...
//! ```
//!
//! Each `tensor` line gives the name, the row-major shape and the byte offset of
//! the tensor inside `weights.bin`, which stores little-endian binary32 values
//! back to back.

use std::fs;
use std::path::Path;

use thiserror::Error;

use super::{BatchNorm, LayerWeights, NetworkError, NetworkSpec, CLASSES, CONV_STAGES, FC1_UNITS};
use crate::io::{decode_f32_le, encode_f32_le, write_atomic};
use crate::tensor::Matrix;

pub const MANIFEST: &str = "manifest";
pub const WEIGHTS_BIN: &str = "weights.bin";
const MAGIC: &str = "xbarsim-weights 1";

#[derive(Debug, Error)]
pub enum ContainerError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("manifest line {line}: {msg}")]
    Manifest { line: usize, msg: String },
    #[error("tensor {name}: {msg}")]
    Tensor { name: String, msg: String },
    #[error(transparent)]
    Network(#[from] NetworkError),
}

fn entries(w: &LayerWeights) -> Vec<(String, Vec<usize>, &[f64])> {
    let mut out: Vec<(String, Vec<usize>, &[f64])> = Vec::new();
    let c = w.spec.channels;
    out.push(("input.mean".into(), vec![c], &w.input_mean));
    out.push(("input.std".into(), vec![c], &w.input_std));
    let mut in_ch = c;
    for (i, def) in CONV_STAGES.iter().enumerate() {
        let name = format!("conv{}", i + 1);
        out.push((
            format!("{name}.weight"),
            vec![def.filters, in_ch, def.kernel, def.kernel],
            &w.conv[i].data,
        ));
        push_bn(&mut out, &name, &w.conv_bn[i]);
        in_ch = def.filters;
    }
    out.push(("fc1.weight".into(), vec![w.fc1.rows, w.fc1.cols], &w.fc1.data));
    push_bn(&mut out, "fc1", &w.fc1_bn);
    out.push(("fc2.weight".into(), vec![w.fc2.rows, w.fc2.cols], &w.fc2.data));
    out.push(("fc2.bias".into(), vec![CLASSES], &w.fc2_bias));
    out
}

fn push_bn<'a>(out: &mut Vec<(String, Vec<usize>, &'a [f64])>, layer: &str, bn: &'a BatchNorm) {
    let n = bn.channels();
    out.push((format!("{layer}.bn.gain"), vec![n], &bn.gain));
    out.push((format!("{layer}.bn.bias"), vec![n], &bn.bias));
    out.push((format!("{layer}.bn.mean"), vec![n], &bn.mean));
    out.push((format!("{layer}.bn.var"), vec![n], &bn.var));
}

/// Serialises weights to `(manifest text, weights.bin bytes)`.
pub fn encode(w: &LayerWeights) -> (String, Vec<u8>) {
    let mut manifest = format!(
        "{MAGIC}\nspec channels={} frames={} freq_bins={}\n",
        w.spec.channels, w.spec.frames, w.spec.freq_bins
    );
    let mut bin = Vec::new();
    for (name, shape, data) in entries(w) {
        let dims: Vec<String> = shape.iter().map(|d| d.to_string()).collect();
        manifest.push_str(&format!("tensor {name} {} {}\n", dims.join(","), bin.len()));
        bin.extend(encode_f32_le(data.iter().copied()));
    }
    (manifest, bin)
}

/// Parses a manifest and payload back into weights, checking every shape.
pub fn decode(manifest: &str, bin: &[u8]) -> Result<LayerWeights, ContainerError> {
    let mut lines = manifest.lines().enumerate();
    let bad = |line: usize, msg: &str| ContainerError::Manifest {
        line: line + 1,
        msg: msg.to_string(),
    };
    match lines.next() {
        Some((_, l)) if l.trim() == MAGIC => {}
        _ => return Err(bad(0, "missing xbarsim-weights header")),
    }
    let (spec_line, spec_text) = lines.next().ok_or_else(|| bad(1, "missing spec line"))?;
    let spec = parse_spec(spec_text).ok_or_else(|| bad(spec_line, "malformed spec line"))?;
    let spec = NetworkSpec::new(spec.channels, spec.frames, spec.freq_bins)?;

    let mut weights = LayerWeights::zeros(spec)?;
    let expected = entries(&weights)
        .into_iter()
        .map(|(n, s, _)| (n, s))
        .collect::<Vec<_>>();
    let floats = decode_f32_le(bin).map_err(|e| ContainerError::Tensor {
        name: WEIGHTS_BIN.into(),
        msg: e.to_string(),
    })?;
    let mut loaded: Vec<Vec<f64>> = Vec::with_capacity(expected.len());
    let mut seen = 0;
    for (idx, line) in lines {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.len() != 4 || parts[0] != "tensor" {
            return Err(bad(idx, "expected `tensor <name> <shape> <offset>`"));
        }
        let (want_name, want_shape) = expected.get(seen).ok_or_else(|| bad(idx, "unexpected extra tensor"))?;
        if parts[1] != want_name {
            return Err(bad(idx, &format!("expected tensor {want_name}, found {}", parts[1])));
        }
        let shape: Vec<usize> = parts[2]
            .split(',')
            .map(|d| d.parse::<usize>())
            .collect::<Result<_, _>>()
            .map_err(|_| bad(idx, "malformed shape"))?;
        if &shape != want_shape {
            return Err(ContainerError::Tensor {
                name: want_name.clone(),
                msg: format!("shape {shape:?} does not match network {want_shape:?}"),
            });
        }
        let offset: usize = parts[3].parse().map_err(|_| bad(idx, "malformed offset"))?;
        let len: usize = shape.iter().product();
        if !offset.is_multiple_of(4) || offset / 4 + len > floats.len() {
            return Err(ContainerError::Tensor {
                name: want_name.clone(),
                msg: format!("offset {offset} + {len} values exceeds payload of {} bytes", bin.len()),
            });
        }
        loaded.push(floats[offset / 4..offset / 4 + len].to_vec());
        seen += 1;
    }
    if seen != expected.len() {
        return Err(ContainerError::Tensor {
            name: expected[seen].0.clone(),
            msg: "missing from manifest".into(),
        });
    }

    let mut it = loaded.into_iter();
    let mut next = || it.next().expect("tensor count checked");
    weights.input_mean = next();
    weights.input_std = next();
    for i in 0..CONV_STAGES.len() {
        let m = &mut weights.conv[i];
        *m = Matrix::from_vec(m.rows, m.cols, next());
        weights.conv_bn[i] = read_bn(&mut next);
    }
    weights.fc1 = Matrix::from_vec(FC1_UNITS, weights.fc1.cols, next());
    weights.fc1_bn = read_bn(&mut next);
    weights.fc2 = Matrix::from_vec(CLASSES, FC1_UNITS, next());
    weights.fc2_bias = next();
    for bn in weights.conv_bn.iter().chain([&weights.fc1_bn]) {
        if bn.var.iter().any(|v| v.is_nan() || *v <= 0.0) {
            return Err(ContainerError::Tensor {
                name: "bn.var".into(),
                msg: "batch-norm variance must be positive".into(),
            });
        }
    }
    Ok(weights)
}

fn read_bn(next: &mut impl FnMut() -> Vec<f64>) -> BatchNorm {
    BatchNorm {
        gain: next(),
        bias: next(),
        mean: next(),
        var: next(),
    }
}

fn parse_spec(line: &str) -> Option<NetworkSpec> {
    let mut parts = line.split_whitespace();
    if parts.next()? != "spec" {
        return None;
    }
    let (mut channels, mut frames, mut freq_bins) = (None, None, None);
    for kv in parts {
        let (k, v) = kv.split_once('=')?;
        let v: usize = v.parse().ok()?;
        match k {
            "channels" => channels = Some(v),
            "frames" => frames = Some(v),
            "freq_bins" => freq_bins = Some(v),
            _ => return None,
        }
    }
    Some(NetworkSpec {
        channels: channels?,
        frames: frames?,
        freq_bins: freq_bins?,
    })
}

pub fn save_weights(dir: &Path, w: &LayerWeights) -> Result<(), ContainerError> {
    let (manifest, bin) = encode(w);
    let io_err = |p: &Path| {
        let path = p.display().to_string();
        move |source| ContainerError::Io { path, source }
    };
    let bin_path = dir.join(WEIGHTS_BIN);
    write_atomic(&bin_path, &bin).map_err(io_err(&bin_path))?;
    let man_path = dir.join(MANIFEST);
    write_atomic(&man_path, manifest.as_bytes()).map_err(io_err(&man_path))?;
    Ok(())
}

pub fn load_weights(dir: &Path) -> Result<LayerWeights, ContainerError> {
    let man_path = dir.join(MANIFEST);
    let manifest = fs::read_to_string(&man_path).map_err(|source| ContainerError::Io {
        path: man_path.display().to_string(),
        source,
    })?;
    let bin_path = dir.join(WEIGHTS_BIN);
    let bin = fs::read(&bin_path).map_err(|source| ContainerError::Io {
        path: bin_path.display().to_string(),
        source,
    })?;
    decode(&manifest, &bin)
}
