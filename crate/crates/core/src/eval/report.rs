use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::ScoreMatrix;
use crate::error::{DidError, Result};

/// Duration strata: short below 5 s, medium from 5 s to 20 s inclusive, long
/// above 20 s.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Bucket {
    Short,
    Medium,
    Long,
}

impl Bucket {
    pub fn of(duration: f64) -> Self {
        if duration < 5.0 {
            Bucket::Short
        } else if duration <= 20.0 {
            Bucket::Medium
        } else {
            Bucket::Long
        }
    }

    pub const ALL: [Bucket; 3] = [Bucket::Short, Bucket::Medium, Bucket::Long];

    pub fn label(self) -> &'static str {
        match self {
            Bucket::Short => "<5s",
            Bucket::Medium => "5-20s",
            Bucket::Long => ">20s",
        }
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate().skip(1) {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tally {
    pub count: usize,
    pub correct: usize,
    /// Percentage, or `None` for an empty tally.
    pub accuracy: Option<f64>,
}

impl Tally {
    fn new(count: usize, correct: usize) -> Self {
        Self {
            count,
            correct,
            accuracy: (count > 0).then(|| 100.0 * correct as f64 / count as f64),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Buckets {
    pub short: Tally,
    pub medium: Tally,
    pub long: Tally,
}

impl Buckets {
    pub fn get(&self, b: Bucket) -> &Tally {
        match b {
            Bucket::Short => &self.short,
            Bucket::Medium => &self.medium,
            Bucket::Long => &self.long,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassAccuracy {
    pub class: String,
    #[serde(flatten)]
    pub tally: Tally,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub overall: Tally,
    pub buckets: Buckets,
    pub per_class: Vec<ClassAccuracy>,
    /// Rows are true classes, columns predictions, each row in percent.
    pub confusion: Vec<Vec<f64>>,
}

/// Accuracy overall, per duration bucket and per class, plus the
/// row-normalized confusion matrix.
pub fn evaluate(scores: &ScoreMatrix) -> Result<EvalReport> {
    if scores.is_empty() {
        return Err(DidError::Input("no scored utterances".into()));
    }
    let c = scores.num_classes();
    let mut counts = vec![vec![0usize; c]; c];
    let mut bucket = [(0usize, 0usize); 3];
    for (i, row) in scores.rows().iter().enumerate() {
        let truth = scores.labels()[i].ok_or_else(|| {
            DidError::Contract(format!(
                "{} has no label; evaluation needs labels",
                scores.utt_ids()[i]
            ))
        })?;
        let pred = argmax(row);
        counts[truth][pred] += 1;
        let b = Bucket::of(scores.durations()[i]) as usize;
        bucket[b].0 += 1;
        bucket[b].1 += usize::from(pred == truth);
    }
    let total: usize = counts.iter().flatten().sum();
    let correct: usize = (0..c).map(|k| counts[k][k]).sum();
    let per_class = (0..c)
        .map(|k| ClassAccuracy {
            class: scores.classes()[k].clone(),
            tally: Tally::new(counts[k].iter().sum(), counts[k][k]),
        })
        .collect();
    let confusion = counts
        .iter()
        .map(|row| {
            let n: usize = row.iter().sum();
            row.iter()
                .map(|&x| {
                    if n == 0 {
                        0.0
                    } else {
                        100.0 * x as f64 / n as f64
                    }
                })
                .collect()
        })
        .collect();
    let tally = |b: Bucket| Tally::new(bucket[b as usize].0, bucket[b as usize].1);
    Ok(EvalReport {
        overall: Tally::new(total, correct),
        buckets: Buckets {
            short: tally(Bucket::Short),
            medium: tally(Bucket::Medium),
            long: tally(Bucket::Long),
        },
        per_class,
        confusion,
    })
}

fn pct(a: Option<f64>) -> String {
    a.map_or_else(|| "-".to_string(), |v| format!("{v:.2}%"))
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report is serializable") + "\n"
    }

    /// Plain-text tables: accuracy by duration, then per class with the
    /// confusion matrix.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<10}{:>8}{:>10}", "Duration", "Count", "Accuracy");
        for b in Bucket::ALL {
            let t = self.buckets.get(b);
            let _ = writeln!(
                out,
                "{:<10}{:>8}{:>10}",
                b.label(),
                t.count,
                pct(t.accuracy)
            );
        }
        let _ = writeln!(
            out,
            "{:<10}{:>8}{:>10}",
            "Overall",
            self.overall.count,
            pct(self.overall.accuracy)
        );
        out.push('\n');
        let width = self
            .per_class
            .iter()
            .map(|c| c.class.len())
            .max()
            .unwrap_or(0)
            .max(5)
            + 2;
        let _ = write!(out, "{:<width$}{:>8}{:>10} |", "Class", "Count", "Accuracy");
        for c in &self.per_class {
            let _ = write!(out, "{:>width$}", c.class);
        }
        out.push('\n');
        for (c, row) in self.per_class.iter().zip(&self.confusion) {
            let _ = write!(
                out,
                "{:<width$}{:>8}{:>10} |",
                c.class,
                c.tally.count,
                pct(c.tally.accuracy)
            );
            for v in row {
                let _ = write!(out, "{:>width$}", format!("{v:.2}"));
            }
            out.push('\n');
        }
        out
    }
}
