use super::FeatureMatrix;
use crate::error::{DidError, Result};

/// Stacks `m` consecutive frames starting at every `n_ds`-th frame.
///
/// Output frame `t'` concatenates input frames `t'*n_ds .. t'*n_ds + m`, with
/// indices past the end clamped to the final frame. The output has
/// `ceil(T / n_ds)` frames of dimension `m * D`.
pub fn stack_downsample(feats: &FeatureMatrix, m: usize, n_ds: usize) -> Result<FeatureMatrix> {
    if m == 0 || n_ds == 0 {
        return Err(DidError::Config(format!(
            "stack factor and downsample factor must be at least 1, got m={m}, n_ds={n_ds}"
        )));
    }
    let (t, d) = (feats.num_frames(), feats.dim());
    let out_len = t.div_ceil(n_ds);
    let mut out = Vec::with_capacity(out_len * m * d);
    for start in (0..t).step_by(n_ds) {
        for j in 0..m {
            out.extend_from_slice(feats.frame((start + j).min(t - 1)));
        }
    }
    Ok(FeatureMatrix::new(out, out_len, m * d)?
        .with_timing(feats.frame_length_ms, feats.frame_shift_ms))
}
