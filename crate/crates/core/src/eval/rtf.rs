use std::time::Instant;

use did_tensor::Tape;
use rand::Rng;
use serde::Serialize;

use crate::error::{DidError, Result};
use crate::features::{fbank, AudioBuffer, FrontendConfig};
use crate::models::{Classifier, Network, Stacking};
use crate::rng::derive_rng;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RtfResult {
    pub downsampling: bool,
    pub utterance_seconds: f64,
    /// Frames entering the network.
    pub encoder_frames: usize,
    /// Median wall-clock time of one front-end + forward pass.
    pub wall_seconds: f64,
    pub rtf: f64,
    pub repetitions: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RtfComparison {
    pub on: RtfResult,
    pub off: RtfResult,
    /// `off.wall_seconds / on.wall_seconds`.
    pub speedup: f64,
}

/// Deterministic test signal: a few tones in low-level noise.
pub fn synthetic_audio(seconds: f64, sample_rate: u32, seed: u64) -> Result<AudioBuffer> {
    let n = (seconds * f64::from(sample_rate)).round() as usize;
    let mut rng = derive_rng(seed, "benchmark.audio");
    let sr = f64::from(sample_rate);
    let samples = (0..n)
        .map(|i| {
            let t = i as f64 / sr;
            let tones: f64 = [220.0, 1250.0, 3100.0]
                .iter()
                .map(|f| (2.0 * std::f64::consts::PI * f * t).sin())
                .sum();
            0.1 * tones + 0.02 * rng.random_range(-1.0..1.0)
        })
        .collect();
    AudioBuffer::new(samples, sample_rate)
}

/// The model as run with or without frame downsampling. Turning
/// downsampling off keeps the stacking (so the input dimension, and hence
/// the same weights, still apply) but advances one frame at a time.
pub fn with_downsampling(model: &Classifier, on: bool) -> Classifier {
    let mut m = model.clone();
    if !on && matches!(m.network, Network::Transformer(_)) {
        m.stacking = Stacking {
            stack_factor: m.stacking.stack_factor,
            downsample_factor: 1,
        };
    }
    m
}

/// Times front-end plus forward pass on a synthetic utterance, reporting the
/// median over `repetitions` runs.
pub fn rtf_benchmark(
    model: &Classifier,
    frontend: &FrontendConfig,
    utterance_seconds: f64,
    downsampling: bool,
    repetitions: usize,
) -> Result<RtfResult> {
    if repetitions == 0 {
        return Err(DidError::Config("need at least one repetition".into()));
    }
    if utterance_seconds.is_nan() || utterance_seconds <= 0.0 {
        return Err(DidError::Input(
            "utterance duration must be positive".into(),
        ));
    }
    let model = with_downsampling(model, downsampling);
    let audio = synthetic_audio(utterance_seconds, 16000, 0)?;
    let mut times = Vec::with_capacity(repetitions);
    let mut frames = 0;
    for _ in 0..repetitions {
        let start = Instant::now();
        let feats = fbank(&audio, frontend)?;
        let prepared = model.prepare(&feats)?;
        let tape = Tape::no_grad();
        let p = model.params().bind(&tape);
        let logits = model.forward(&tape, &p, &prepared, None)?;
        std::hint::black_box(logits.data());
        times.push(start.elapsed().as_secs_f64());
        frames = prepared.num_frames();
    }
    times.sort_by(f64::total_cmp);
    let wall = times[times.len() / 2];
    Ok(RtfResult {
        downsampling,
        utterance_seconds,
        encoder_frames: frames,
        wall_seconds: wall,
        rtf: wall / utterance_seconds,
        repetitions,
    })
}

/// Benchmarks both modes and reports their speed ratio.
pub fn rtf_compare(
    model: &Classifier,
    frontend: &FrontendConfig,
    utterance_seconds: f64,
    repetitions: usize,
) -> Result<RtfComparison> {
    let off = rtf_benchmark(model, frontend, utterance_seconds, false, repetitions)?;
    let on = rtf_benchmark(model, frontend, utterance_seconds, true, repetitions)?;
    Ok(RtfComparison {
        speedup: off.wall_seconds / on.wall_seconds,
        on,
        off,
    })
}
