use std::fs::File;
use std::io::{BufReader, Read, Write};
use std::path::Path;

use super::FeatureMatrix;
use crate::error::{DidError, Result};

pub const MAGIC: &[u8; 4] = b"FEAT";
pub const VERSION: u16 = 1;

/// Encodes features as `FEAT`, version, `T`, `D`, frame shift, then `f32`
/// little-endian row-major values.
pub fn encode<W: Write>(out: &mut W, feats: &FeatureMatrix) -> std::io::Result<()> {
    out.write_all(MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    out.write_all(&(feats.num_frames() as u64).to_le_bytes())?;
    out.write_all(&(feats.dim() as u64).to_le_bytes())?;
    out.write_all(&feats.frame_shift_ms.to_le_bytes())?;
    for &v in feats.as_slice() {
        out.write_all(&(v as f32).to_le_bytes())?;
    }
    Ok(())
}

fn read_array<const N: usize, R: Read>(input: &mut R) -> std::io::Result<[u8; N]> {
    let mut buf = [0u8; N];
    input.read_exact(&mut buf)?;
    Ok(buf)
}

pub fn decode<R: Read>(input: &mut R) -> Result<FeatureMatrix> {
    let truncated = |e: std::io::Error| DidError::Format(format!("truncated feature file: {e}"));
    let magic: [u8; 4] = read_array(input).map_err(truncated)?;
    if &magic != MAGIC {
        return Err(DidError::Format(format!("bad feature magic {magic:?}")));
    }
    let version = u16::from_le_bytes(read_array(input).map_err(truncated)?);
    if version != VERSION {
        return Err(DidError::Format(format!(
            "unsupported feature file version {version}"
        )));
    }
    let t = u64::from_le_bytes(read_array(input).map_err(truncated)?) as usize;
    let d = u64::from_le_bytes(read_array(input).map_err(truncated)?) as usize;
    let shift = u16::from_le_bytes(read_array(input).map_err(truncated)?);
    let n = t
        .checked_mul(d)
        .filter(|&n| n > 0 && n < (1 << 34))
        .ok_or_else(|| DidError::Format(format!("implausible feature extents {t} x {d}")))?;
    let mut raw = Vec::with_capacity(n * 4);
    input
        .take((n * 4) as u64)
        .read_to_end(&mut raw)
        .map_err(truncated)?;
    if raw.len() != n * 4 {
        return Err(DidError::Format(format!(
            "feature payload holds {} bytes, expected {}",
            raw.len(),
            n * 4
        )));
    }
    let data = raw
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
        .collect();
    let feats = FeatureMatrix::new(data, t, d)?;
    let length = feats.frame_length_ms;
    Ok(feats.with_timing(length, shift))
}

pub fn write_features(path: &Path, feats: &FeatureMatrix) -> Result<()> {
    let mut buf = Vec::with_capacity(24 + 4 * feats.as_slice().len());
    encode(&mut buf, feats).map_err(|e| DidError::io(path, e))?;
    crate::fsutil::write_atomic(path, &buf)
}

pub fn read_features(path: &Path) -> Result<FeatureMatrix> {
    let file = File::open(path).map_err(|e| DidError::io(path, e))?;
    decode(&mut BufReader::new(file)).map_err(|e| match e {
        DidError::Format(msg) => DidError::Format(format!("{}: {msg}", path.display())),
        other => other,
    })
}
