//! Small file helpers shared by the on-disk formats.

use std::fs;
use std::io;
use std::path::Path;

/// Writes `bytes` to `path` through a sibling temporary file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let name = path
        .file_name()
        .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidInput, "path has no file name"))?;
    let tmp = dir.join(format!(".{}.tmp-{}", name.to_string_lossy(), std::process::id()));
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)
}

/// Encodes values as little-endian IEEE-754 binary32.
pub fn encode_f32_le(values: impl IntoIterator<Item = f64>) -> Vec<u8> {
    let iter = values.into_iter();
    let mut out = Vec::with_capacity(iter.size_hint().0 * 4);
    for v in iter {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

/// Decodes little-endian binary32 values; trailing partial words are an error.
pub fn decode_f32_le(bytes: &[u8]) -> io::Result<Vec<f64>> {
    if !bytes.len().is_multiple_of(4) {
        return Err(io::Error::new(
            io::ErrorKind::InvalidData,
            format!("float payload length {} is not a multiple of 4", bytes.len()),
        ));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn f32_codec() {
        let bytes = encode_f32_le([1.0, -2.5, 0.1]);
        assert_eq!(&bytes[..4], &1.0f32.to_le_bytes());
        let back = decode_f32_le(&bytes).unwrap();
        assert_eq!(back, vec![1.0, -2.5, 0.1f32 as f64]);
        assert!(decode_f32_le(&bytes[..5]).is_err());
    }

    #[test]
    fn atomic_write_replaces() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sub/out.txt");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(fs::read(&p).unwrap(), b"two");
        assert_eq!(fs::read_dir(p.parent().unwrap()).unwrap().count(), 1);
    }
}
