use std::fs::File;
use std::io::{BufReader, Read, Write};
use std::path::Path;

use did_tensor::serialize::{read_tensor, write_tensor};
use rand::SeedableRng;

use super::{Classifier, CnnConfig, Stacking, TransformerConfig};
use crate::error::{DidError, Result};
use crate::kv::Pairs;
use crate::rng::DidRng;

pub const MAGIC: &[u8; 4] = b"DIDM";
pub const VERSION: u16 = 1;

/// Layout: magic, version `u16`, config length `u32` and UTF-8 `key=value`
/// lines, tensor count `u32`, then per tensor a `u16`-length name followed by
/// the tensor in `TNSR` format. Integers are little-endian.
pub fn write_checkpoint<W: Write>(out: &mut W, model: &Classifier) -> Result<()> {
    let config: String = model
        .config_pairs()
        .iter()
        .map(|(k, v)| format!("{k}={v}\n"))
        .collect();
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(config.len() as u32).to_le_bytes());
    buf.extend_from_slice(config.as_bytes());
    let params = model.params();
    buf.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, tensor) in params.iter() {
        buf.extend_from_slice(&(name.len() as u16).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        write_tensor(&mut buf, tensor)?;
    }
    out.write_all(&buf)
        .map_err(|e| DidError::Format(format!("writing checkpoint: {e}")))
}

fn read_n<R: Read>(input: &mut R, n: usize) -> Result<Vec<u8>> {
    let mut buf = vec![0u8; n];
    input
        .read_exact(&mut buf)
        .map_err(|e| DidError::Format(format!("truncated checkpoint: {e}")))?;
    Ok(buf)
}

fn read_u16<R: Read>(input: &mut R) -> Result<u16> {
    let b = read_n(input, 2)?;
    Ok(u16::from_le_bytes([b[0], b[1]]))
}

fn read_u32<R: Read>(input: &mut R) -> Result<u32> {
    let b = read_n(input, 4)?;
    Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
}

pub fn read_checkpoint<R: Read>(input: &mut R) -> Result<Classifier> {
    if read_n(input, 4)? != MAGIC {
        return Err(DidError::Format(
            "not a model checkpoint (bad magic)".into(),
        ));
    }
    let version = read_u16(input)?;
    if version != VERSION {
        return Err(DidError::Format(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let len = read_u32(input)? as usize;
    let text = String::from_utf8(read_n(input, len)?)
        .map_err(|_| DidError::Format("checkpoint config is not UTF-8".into()))?;
    let mut pairs = Pairs::new("checkpoint");
    for line in text.lines().filter(|l| !l.is_empty()) {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| DidError::Format(format!("bad checkpoint config line {line:?}")))?;
        pairs.set_raw(k, v);
    }
    let mut model = classifier_from_pairs(pairs)?;
    let count = read_u32(input)? as usize;
    let mut loaded = Vec::with_capacity(count);
    for _ in 0..count {
        let n = read_u16(input)? as usize;
        let name = String::from_utf8(read_n(input, n)?)
            .map_err(|_| DidError::Format("parameter name is not UTF-8".into()))?;
        let tensor = read_tensor(input).map_err(|e| DidError::Format(format!("{name}: {e}")))?;
        loaded.push((name, tensor));
    }
    model.params_mut().load(loaded)?;
    Ok(model)
}

fn classifier_from_pairs(mut pairs: Pairs) -> Result<Classifier> {
    let kind: String = pairs.take("kind", String::new())?;
    let classes: Vec<String> = pairs.take_list("classes", Vec::new())?;
    let stacking = Stacking {
        stack_factor: pairs.take("stack_factor", 1)?,
        downsample_factor: pairs.take("downsample_factor", 1)?,
    };
    // Parameters are overwritten by the stored tensors, so the init seed is
    // irrelevant.
    let mut rng = DidRng::seed_from_u64(0);
    let model = match kind.as_str() {
        "transformer" => {
            let cfg = TransformerConfig::from_pairs(&mut pairs)?;
            Classifier::transformer(cfg, stacking, classes, &mut rng)?
        }
        "cnn" => {
            let cfg = CnnConfig::from_pairs(&mut pairs)?;
            let mut m = Classifier::cnn(cfg, classes, &mut rng)?;
            m.stacking = stacking;
            m
        }
        other => {
            return Err(DidError::Format(format!("unknown model kind {other:?}")));
        }
    };
    pairs
        .finish()
        .map_err(|e| DidError::Format(e.to_string()))?;
    Ok(model)
}

pub fn save_checkpoint(path: &Path, model: &Classifier) -> Result<()> {
    let mut buf = Vec::new();
    write_checkpoint(&mut buf, model)?;
    crate::fsutil::write_atomic(path, &buf)
}

pub fn load_checkpoint(path: &Path) -> Result<Classifier> {
    let file = File::open(path).map_err(|e| DidError::io(path, e))?;
    read_checkpoint(&mut BufReader::new(file)).map_err(|e| match e {
        DidError::Format(msg) => DidError::Format(format!("{}: {msg}", path.display())),
        other => other,
    })
}
