//! Scoring, score-level fusion, accuracy reports, operation counts and
//! real-time-factor measurement.

pub mod complexity;
mod report;
mod rtf;
mod scores;

pub use complexity::{op_count, ComplexityParams, LayerType};
pub use report::{argmax, evaluate, Bucket, Buckets, ClassAccuracy, EvalReport, Tally};
pub use rtf::{
    rtf_benchmark, rtf_compare, synthetic_audio, with_downsampling, RtfComparison, RtfResult,
};
pub use scores::{fuse, ScoreMatrix};

use rayon::prelude::*;

use crate::error::Result;
use crate::features::FeatureMatrix;
use crate::models::Classifier;

/// One utterance to score.
pub struct ScoreInput<'a> {
    pub utt_id: &'a str,
    pub duration: f64,
    pub label: Option<usize>,
    pub feats: &'a FeatureMatrix,
}

/// Posterior scores for every input, in input order.
pub fn score(model: &Classifier, inputs: &[ScoreInput<'_>]) -> Result<ScoreMatrix> {
    let rows = inputs
        .par_iter()
        .map(|u| model.posteriors(u.feats))
        .collect::<Result<Vec<_>>>()?;
    let mut m = ScoreMatrix::new(model.classes.clone())?;
    for (u, row) in inputs.iter().zip(rows) {
        m.push(u.utt_id, u.duration, u.label, row)?;
    }
    Ok(m)
}
