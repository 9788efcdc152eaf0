use std::collections::HashSet;
use std::path::{Path, PathBuf};

use crate::error::{DidError, Result};

/// One utterance line: id, audio (or feature) path, label, duration.
#[derive(Clone, Debug, PartialEq)]
pub struct ManifestEntry {
    pub utt_id: String,
    pub path: PathBuf,
    pub label: String,
    pub duration: f64,
}

/// Parses a tab-separated manifest. Relative paths are resolved against the
/// manifest's directory; blank lines and `#` comments are skipped.
pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = std::fs::read_to_string(path).map_err(|e| DidError::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new(""));
    parse_manifest(&text, base).map_err(|e| match e {
        DidError::Format(msg) => DidError::Format(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn parse_manifest(text: &str, base: &Path) -> Result<Vec<ManifestEntry>> {
    let mut seen = HashSet::new();
    let mut entries = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let bad = |what: String| DidError::Format(format!("line {}: {what}", n + 1));
        let [utt_id, wav, label, duration] = fields[..] else {
            return Err(bad(format!(
                "expected 4 tab-separated fields, found {}",
                fields.len()
            )));
        };
        if utt_id.is_empty() || wav.is_empty() || label.is_empty() {
            return Err(bad("empty field".into()));
        }
        let duration: f64 = duration
            .trim()
            .parse()
            .map_err(|_| bad(format!("duration {duration:?} is not a number")))?;
        if !(duration.is_finite() && duration > 0.0) {
            return Err(bad(format!("duration must be positive, got {duration}")));
        }
        if !seen.insert(utt_id.to_string()) {
            return Err(bad(format!("duplicate utterance id {utt_id:?}")));
        }
        let p = Path::new(wav);
        entries.push(ManifestEntry {
            utt_id: utt_id.to_string(),
            path: if p.is_absolute() {
                p.to_path_buf()
            } else {
                base.join(p)
            },
            label: label.to_string(),
            duration,
        });
    }
    if entries.is_empty() {
        return Err(DidError::Input("manifest lists no utterances".into()));
    }
    Ok(entries)
}

/// Renders entries, writing paths relative to `base` where possible.
pub fn format_manifest(entries: &[ManifestEntry], base: &Path) -> Result<String> {
    let mut out = String::new();
    for e in entries {
        let rel = e.path.strip_prefix(base).unwrap_or(&e.path);
        let path = rel
            .to_str()
            .ok_or_else(|| DidError::Input(format!("path {} is not valid UTF-8", rel.display())))?;
        for field in [e.utt_id.as_str(), path, e.label.as_str()] {
            if field.contains(['\t', '\n']) {
                return Err(DidError::Input(format!(
                    "manifest field {field:?} contains a tab or newline"
                )));
            }
        }
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\n",
            e.utt_id, path, e.label, e.duration
        ));
    }
    Ok(out)
}

pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let base = path.parent().unwrap_or(Path::new(""));
    let text = format_manifest(entries, base)?;
    crate::fsutil::write_atomic(path, text.as_bytes())
}
