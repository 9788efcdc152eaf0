use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{DidError, Result};

const ROW_SUM_TOLERANCE: f64 = 1e-6;

/// Posterior scores for a set of utterances, one row per utterance.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreMatrix {
    classes: Vec<String>,
    utt_ids: Vec<String>,
    scores: Vec<Vec<f64>>,
    durations: Vec<f64>,
    labels: Vec<Option<usize>>,
}

impl ScoreMatrix {
    pub fn new(classes: Vec<String>) -> Result<Self> {
        if classes.len() < 2 {
            return Err(DidError::Input(format!(
                "score matrix needs at least 2 classes, got {}",
                classes.len()
            )));
        }
        if classes
            .iter()
            .any(|c| c.is_empty() || c.contains([',', '\t', '\n']))
        {
            return Err(DidError::Input(
                "class names must be non-empty and free of commas, tabs and newlines".into(),
            ));
        }
        Ok(Self {
            classes,
            utt_ids: Vec::new(),
            scores: Vec::new(),
            durations: Vec::new(),
            labels: Vec::new(),
        })
    }

    /// Appends one utterance. Rows must be non-negative and sum to one.
    pub fn push(
        &mut self,
        utt_id: &str,
        duration: f64,
        label: Option<usize>,
        scores: Vec<f64>,
    ) -> Result<()> {
        let c = self.classes.len();
        if scores.len() != c {
            return Err(DidError::Dimension(format!(
                "{utt_id}: {} scores for {c} classes",
                scores.len()
            )));
        }
        if scores.iter().any(|s| !s.is_finite() || *s < 0.0) {
            return Err(DidError::Numeric(format!(
                "{utt_id}: scores must be finite and non-negative"
            )));
        }
        let sum: f64 = scores.iter().sum();
        if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
            return Err(DidError::Numeric(format!(
                "{utt_id}: scores sum to {sum}, not 1"
            )));
        }
        if !(duration.is_finite() && duration > 0.0) {
            return Err(DidError::Input(format!(
                "{utt_id}: duration must be positive"
            )));
        }
        if let Some(l) = label {
            if l >= c {
                return Err(DidError::Input(format!("{utt_id}: label {l} out of range")));
            }
        }
        if utt_id.is_empty() || utt_id.contains(['\t', '\n']) {
            return Err(DidError::Input(format!("bad utterance id {utt_id:?}")));
        }
        if self.utt_ids.iter().any(|u| u == utt_id) {
            return Err(DidError::Input(format!(
                "duplicate utterance id {utt_id:?}"
            )));
        }
        self.utt_ids.push(utt_id.to_string());
        self.durations.push(duration);
        self.labels.push(label);
        self.scores.push(scores);
        Ok(())
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn len(&self) -> usize {
        self.utt_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utt_ids.is_empty()
    }

    pub fn utt_ids(&self) -> &[String] {
        &self.utt_ids
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.scores
    }

    pub fn durations(&self) -> &[f64] {
        &self.durations
    }

    pub fn labels(&self) -> &[Option<usize>] {
        &self.labels
    }

    pub fn class_index(&self, name: &str) -> Option<usize> {
        self.classes.iter().position(|c| c == name)
    }

    /// Tab-separated rendering: a `#classes:` header, then utterance id,
    /// duration, label (or `-`) and one column per class. Numbers use the
    /// shortest representation that round-trips.
    pub fn to_tsv(&self) -> String {
        let mut out = format!("#classes: {}\n", self.classes.join(","));
        for i in 0..self.len() {
            let label = self.labels[i].map_or("-", |l| self.classes[l].as_str());
            let _ = write!(out, "{}\t{}\t{}", self.utt_ids[i], self.durations[i], label);
            for s in &self.scores[i] {
                let _ = write!(out, "\t{s}");
            }
            out.push('\n');
        }
        out
    }

    pub fn from_tsv(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines
            .next()
            .ok_or_else(|| DidError::Format("empty score file".into()))?;
        let names = header
            .strip_prefix("#classes:")
            .ok_or_else(|| DidError::Format("score file must start with '#classes:'".into()))?;
        let classes = names
            .trim()
            .split(',')
            .map(|s| s.trim().to_string())
            .collect();
        let mut m = Self::new(classes).map_err(|e| DidError::Format(e.to_string()))?;
        for (n, line) in lines {
            let bad = |what: String| DidError::Format(format!("line {}: {what}", n + 1));
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 + m.num_classes() {
                return Err(bad(format!(
                    "expected {} fields, found {}",
                    3 + m.num_classes(),
                    fields.len()
                )));
            }
            let duration: f64 = fields[1]
                .parse()
                .map_err(|_| bad(format!("bad duration {:?}", fields[1])))?;
            let label = match fields[2] {
                "-" => None,
                name => Some(
                    m.class_index(name)
                        .ok_or_else(|| bad(format!("unknown label {name:?}")))?,
                ),
            };
            let scores = fields[3..]
                .iter()
                .map(|s| {
                    s.parse::<f64>()
                        .map_err(|_| bad(format!("bad score {s:?}")))
                })
                .collect::<Result<Vec<_>>>()?;
            m.push(fields[0], duration, label, scores)
                .map_err(|e| bad(e.to_string()))?;
        }
        Ok(m)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| DidError::io(path, e))?;
        Self::from_tsv(&text).map_err(|e| match e {
            DidError::Format(msg) => DidError::Format(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        crate::fsutil::write_atomic(path, self.to_tsv().as_bytes())
    }
}

/// Averages two score matrices row by row, aligning rows by utterance id.
/// The result follows `a`'s row order.
pub fn fuse(a: &ScoreMatrix, b: &ScoreMatrix) -> Result<ScoreMatrix> {
    if a.classes != b.classes {
        return Err(DidError::Alignment(format!(
            "class lists differ: [{}] vs [{}]",
            a.classes.join(","),
            b.classes.join(",")
        )));
    }
    let index: HashMap<&str, usize> = b
        .utt_ids
        .iter()
        .enumerate()
        .map(|(i, u)| (u.as_str(), i))
        .collect();
    let ids_a: BTreeSet<&str> = a.utt_ids.iter().map(String::as_str).collect();
    let ids_b: BTreeSet<&str> = index.keys().copied().collect();
    if ids_a != ids_b {
        let diff: Vec<&str> = ids_a.symmetric_difference(&ids_b).copied().collect();
        return Err(DidError::Alignment(format!(
            "utterance sets differ; symmetric difference: {}",
            diff.join(", ")
        )));
    }
    let mut out = ScoreMatrix::new(a.classes.clone())?;
    for (i, id) in a.utt_ids.iter().enumerate() {
        let j = index[id.as_str()];
        let label = match (a.labels[i], b.labels[j]) {
            (Some(x), Some(y)) if x != y => {
                return Err(DidError::Alignment(format!(
                    "{id}: labels disagree ({} vs {})",
                    a.classes[x], b.classes[y]
                )));
            }
            (x, y) => x.or(y),
        };
        let row = a.scores[i]
            .iter()
            .zip(&b.scores[j])
            .map(|(x, y)| (x + y) / 2.0)
            .collect();
        out.push(id, a.durations[i], label, row)?;
    }
    Ok(out)
}
