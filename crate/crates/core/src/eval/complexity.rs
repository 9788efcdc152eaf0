//! Leading-order operation counts per layer, and instrumented reference
//! layers to check them against.

use std::fmt;
use std::str::FromStr;

use crate::error::{DidError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerType {
    SelfAttention,
    Convolution,
}

impl FromStr for LayerType {
    type Err = DidError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "attention" | "self-attention" | "self_attention" => Ok(LayerType::SelfAttention),
            "conv" | "convolution" | "convolutional" => Ok(LayerType::Convolution),
            other => Err(DidError::Contract(format!("unknown layer type {other:?}"))),
        }
    }
}

impl fmt::Display for LayerType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LayerType::SelfAttention => "self-attention",
            LayerType::Convolution => "convolution",
        })
    }
}

/// Sequence length `n`, representation size `d` and kernel width `k`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ComplexityParams {
    pub n: u64,
    pub d: u64,
    pub k: u64,
}

/// `n^2 d` for self-attention, `k n d^2` for convolution.
pub fn op_count(layer: LayerType, p: ComplexityParams) -> Result<u128> {
    if p.n == 0 || p.d == 0 || p.k == 0 {
        return Err(DidError::Input(format!(
            "complexity parameters must be positive, got {p:?}"
        )));
    }
    let (n, d, k) = (u128::from(p.n), u128::from(p.d), u128::from(p.k));
    Ok(match layer {
        LayerType::SelfAttention => n * n * d,
        LayerType::Convolution => k * n * d * d,
    })
}

/// Single-head attention `softmax(X X^T / sqrt(d)) X` over an `n x d` input,
/// written as plain loops. Returns the output and the number of
/// multiplications performed.
pub fn instrumented_attention(x: &[f64], n: usize, d: usize) -> (Vec<f64>, u64) {
    assert_eq!(x.len(), n * d);
    let mut mults = 0u64;
    let scale = 1.0 / (d as f64).sqrt();
    let mut out = vec![0.0; n * d];
    let mut w = vec![0.0; n];
    for i in 0..n {
        for j in 0..n {
            let mut s = 0.0;
            for c in 0..d {
                s += x[i * d + c] * x[j * d + c];
                mults += 1;
            }
            w[j] = s * scale;
        }
        let max = w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for v in &mut w {
            *v = (*v - max).exp();
            z += *v;
        }
        for j in 0..n {
            for c in 0..d {
                out[i * d + c] += w[j] / z * x[j * d + c];
                mults += 1;
            }
        }
    }
    (out, mults)
}

/// Same-padded convolution of an `n x d` input with `k x d x d` weights as
/// plain loops. Returns the output and the multiplication count.
pub fn instrumented_convolution(
    x: &[f64],
    weights: &[f64],
    n: usize,
    d: usize,
    k: usize,
) -> (Vec<f64>, u64) {
    assert_eq!(x.len(), n * d);
    assert_eq!(weights.len(), k * d * d);
    let mut mults = 0u64;
    let mut out = vec![0.0; n * d];
    let half = k / 2;
    for t in 0..n {
        for tap in 0..k {
            let src = t + tap;
            let in_range = src >= half && src - half < n;
            for ci in 0..d {
                for co in 0..d {
                    if in_range {
                        out[t * d + co] +=
                            x[(src - half) * d + ci] * weights[(tap * d + ci) * d + co];
                    }
                    mults += 1;
                }
            }
        }
    }
    (out, mults)
}
