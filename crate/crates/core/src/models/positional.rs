use did_tensor::Tensor;

use crate::error::{DidError, Result};

/// Sinusoidal position table: `PE[pos, 2i] = sin(pos / 10000^(2i/d))` and
/// `PE[pos, 2i+1] = cos(pos / 10000^(2i/d))`.
pub fn positional_encoding(seq_len: usize, d_model: usize) -> Result<Tensor> {
    if d_model == 0 || !d_model.is_multiple_of(2) {
        return Err(DidError::Config(format!(
            "positional encoding needs an even, positive d_model, got {d_model}"
        )));
    }
    if seq_len == 0 {
        return Err(DidError::Input(
            "positional encoding of an empty sequence".into(),
        ));
    }
    let freqs: Vec<f64> = (0..d_model / 2)
        .map(|i| 10000f64.powf(-((2 * i) as f64) / d_model as f64))
        .collect();
    let mut data = Vec::with_capacity(seq_len * d_model);
    for pos in 0..seq_len {
        for &w in &freqs {
            let angle = pos as f64 * w;
            data.push(angle.sin());
            data.push(angle.cos());
        }
    }
    Ok(Tensor::new(vec![seq_len, d_model], data)?)
}
