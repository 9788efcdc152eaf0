//! Learning-free classifiers used to check what information the synthetic
//! corpus carries.

use crate::error::{DidError, Result};
use crate::features::FeatureMatrix;

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Mean cosine similarity between frames `t` and `t + lag`.
pub fn lag_similarity(feats: &FeatureMatrix, lag: usize) -> Option<f64> {
    let t = feats.num_frames();
    (lag < t).then(|| {
        (0..t - lag)
            .map(|i| cosine(feats.frame(i), feats.frame(i + lag)))
            .sum::<f64>()
            / (t - lag) as f64
    })
}

/// Picks the candidate lag with the highest frame self-similarity.
#[derive(Clone, Debug)]
pub struct LagOracle {
    pub lags: Vec<usize>,
}

impl LagOracle {
    pub fn predict(&self, feats: &FeatureMatrix) -> usize {
        let mut best = (0, f64::NEG_INFINITY);
        for (c, &lag) in self.lags.iter().enumerate() {
            let s = lag_similarity(feats, lag).unwrap_or(f64::NEG_INFINITY);
            if s > best.1 {
                best = (c, s);
            }
        }
        best.0
    }
}

pub fn lag_oracle(lags: &[usize]) -> LagOracle {
    LagOracle {
        lags: lags.to_vec(),
    }
}

/// Utterance descriptor computable from `window`-frame contexts alone: the
/// average over all windows of each window's mean frame, per-dimension
/// standard deviation, and frame similarity at every lag inside the window.
pub fn window_descriptor(feats: &FeatureMatrix, window: usize) -> Result<Vec<f64>> {
    let (t, d) = (feats.num_frames(), feats.dim());
    if t < window || window < 2 {
        return Err(DidError::Input(format!(
            "{t} frames cannot hold a {window}-frame window"
        )));
    }
    let starts = t - window + 1;
    let mut desc = vec![0.0; 2 * d + window - 1];
    for s in 0..starts {
        for j in 0..d {
            let col: Vec<f64> = (s..s + window).map(|i| feats.frame(i)[j]).collect();
            let mean = col.iter().sum::<f64>() / window as f64;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / window as f64;
            desc[j] += mean;
            desc[d + j] += var.sqrt();
        }
        for lag in 1..window {
            let sim: f64 = (s..s + window - lag)
                .map(|i| cosine(feats.frame(i), feats.frame(i + lag)))
                .sum::<f64>()
                / (window - lag) as f64;
            desc[2 * d + lag - 1] += sim;
        }
    }
    desc.iter_mut().for_each(|v| *v /= starts as f64);
    Ok(desc)
}

/// Nearest standardized class centroid over [`window_descriptor`]s.
#[derive(Clone, Debug)]
pub struct WindowOracle {
    pub window: usize,
    centroids: Vec<Vec<f64>>,
    scale: Vec<f64>,
}

impl WindowOracle {
    pub fn predict(&self, feats: &FeatureMatrix) -> Result<usize> {
        let desc = window_descriptor(feats, self.window)?;
        let dist = |c: &[f64]| -> f64 {
            desc.iter()
                .zip(c)
                .zip(&self.scale)
                .map(|((x, m), s)| ((x - m) / s).powi(2))
                .sum()
        };
        let mut best = (0, f64::INFINITY);
        for (k, c) in self.centroids.iter().enumerate() {
            let d = dist(c);
            if d < best.1 {
                best = (k, d);
            }
        }
        Ok(best.0)
    }
}

/// Fits a [`WindowOracle`] on labelled training utterances.
pub fn window_oracle(
    train: &[(&FeatureMatrix, usize)],
    num_classes: usize,
    window: usize,
) -> Result<WindowOracle> {
    let descs = train
        .iter()
        .map(|(f, _)| window_descriptor(f, window))
        .collect::<Result<Vec<_>>>()?;
    let width = descs.first().map_or(0, Vec::len);
    let mut centroids = vec![vec![0.0; width]; num_classes];
    let mut counts = vec![0usize; num_classes];
    for (d, (_, label)) in descs.iter().zip(train) {
        counts[*label] += 1;
        for (c, v) in centroids[*label].iter_mut().zip(d) {
            *c += v;
        }
    }
    if counts.contains(&0) {
        return Err(DidError::Input(
            "every class needs training utterances".into(),
        ));
    }
    for (c, n) in centroids.iter_mut().zip(&counts) {
        c.iter_mut().for_each(|v| *v /= *n as f64);
    }
    let n = descs.len() as f64;
    let scale = (0..width)
        .map(|j| {
            let mean = descs.iter().map(|d| d[j]).sum::<f64>() / n;
            let var = descs.iter().map(|d| (d[j] - mean).powi(2)).sum::<f64>() / n;
            var.sqrt().max(1e-9)
        })
        .collect();
    Ok(WindowOracle {
        window,
        centroids,
        scale,
    })
}

/// Largest absolute difference, over dimensions and class pairs, between
/// per-class mean feature vectors.
pub fn class_mean_spread(feats: &[(&FeatureMatrix, usize)], num_classes: usize) -> Result<f64> {
    let d = feats
        .first()
        .map(|(f, _)| f.dim())
        .ok_or_else(|| DidError::Input("no features".into()))?;
    let mut sums = vec![vec![0.0; d]; num_classes];
    let mut frames = vec![0usize; num_classes];
    for (f, label) in feats {
        for t in 0..f.num_frames() {
            for (s, v) in sums[*label].iter_mut().zip(f.frame(t)) {
                *s += v;
            }
        }
        frames[*label] += f.num_frames();
    }
    if frames.contains(&0) {
        return Err(DidError::Input("every class needs frames".into()));
    }
    let means: Vec<Vec<f64>> = sums
        .iter()
        .zip(&frames)
        .map(|(s, n)| s.iter().map(|v| v / *n as f64).collect())
        .collect();
    let mut spread: f64 = 0.0;
    for a in 0..num_classes {
        for b in a + 1..num_classes {
            for (x, y) in means[a].iter().zip(&means[b]) {
                spread = spread.max((x - y).abs());
            }
        }
    }
    Ok(spread)
}
