//! Acoustic front-end: WAV input, log-mel filterbank features, CMVN and
//! frame stacking with downsampling.

mod fbank;
pub mod io;
mod manifest;
mod stack;
mod wav;

pub use fbank::{cmvn, fbank, MelFilterbank};
pub use io::{read_features, write_features};
pub use manifest::{format_manifest, parse_manifest, read_manifest, write_manifest, ManifestEntry};
pub use stack::stack_downsample;
pub use wav::{read_wav, write_wav};

use crate::error::{DidError, Result};
use crate::kv::Pairs;

/// Mono PCM audio scaled to `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct AudioBuffer {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl AudioBuffer {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(DidError::Input("sample rate must be positive".into()));
        }
        if samples.is_empty() {
            return Err(DidError::Input("audio buffer is empty".into()));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn duration_seconds(&self) -> f64 {
        self.samples.len() as f64 / f64::from(self.sample_rate)
    }
}

/// Front-end settings.
#[derive(Clone, Debug, PartialEq)]
pub struct FrontendConfig {
    pub n_mels: usize,
    pub frame_length_ms: u16,
    pub frame_shift_ms: u16,
    /// Frames concatenated into one stacked frame (`m`).
    pub stack_factor: usize,
    /// Keep every n-th stacked frame.
    pub downsample_factor: usize,
    pub cmvn: bool,
    /// Lower edge of the first mel filter; the upper edge is Nyquist.
    pub low_freq_hz: f64,
}

impl Default for FrontendConfig {
    fn default() -> Self {
        Self {
            n_mels: 80,
            frame_length_ms: 25,
            frame_shift_ms: 10,
            stack_factor: 4,
            downsample_factor: 3,
            cmvn: true,
            low_freq_hz: 20.0,
        }
    }
}

impl FrontendConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_mels == 0 || self.stack_factor == 0 || self.downsample_factor == 0 {
            return Err(DidError::Config(
                "n_mels, stack_factor and downsample_factor must all be at least 1".into(),
            ));
        }
        if self.frame_length_ms == 0 || self.frame_shift_ms == 0 {
            return Err(DidError::Config(
                "frame length and shift must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn frame_length_samples(&self, sample_rate: u32) -> usize {
        ms_to_samples(self.frame_length_ms, sample_rate)
    }

    pub fn frame_shift_samples(&self, sample_rate: u32) -> usize {
        ms_to_samples(self.frame_shift_ms, sample_rate)
    }

    /// Dimension of a stacked frame.
    pub fn stacked_dim(&self) -> usize {
        self.n_mels * self.stack_factor
    }

    pub fn to_pairs(&self, out: &mut Pairs) {
        out.insert("n_mels", self.n_mels);
        out.insert("frame_length_ms", self.frame_length_ms);
        out.insert("frame_shift_ms", self.frame_shift_ms);
        out.insert("stack_factor", self.stack_factor);
        out.insert("downsample_factor", self.downsample_factor);
        out.insert("cmvn", self.cmvn);
        out.insert("low_freq_hz", self.low_freq_hz);
    }

    pub fn from_pairs(p: &mut Pairs) -> Result<Self> {
        let d = Self::default();
        Ok(Self {
            n_mels: p.take("n_mels", d.n_mels)?,
            frame_length_ms: p.take("frame_length_ms", d.frame_length_ms)?,
            frame_shift_ms: p.take("frame_shift_ms", d.frame_shift_ms)?,
            stack_factor: p.take("stack_factor", d.stack_factor)?,
            downsample_factor: p.take("downsample_factor", d.downsample_factor)?,
            cmvn: p.take_bool("cmvn", d.cmvn)?,
            low_freq_hz: p.take("low_freq_hz", d.low_freq_hz)?,
        })
    }
}

fn ms_to_samples(ms: u16, sample_rate: u32) -> usize {
    (f64::from(ms) * f64::from(sample_rate) / 1000.0).round() as usize
}

/// Per-utterance `frames x dim` feature matrix, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix {
    frames: Vec<f64>,
    num_frames: usize,
    dim: usize,
    pub frame_length_ms: u16,
    pub frame_shift_ms: u16,
}

impl FeatureMatrix {
    pub fn new(frames: Vec<f64>, num_frames: usize, dim: usize) -> Result<Self> {
        if num_frames == 0 || dim == 0 {
            return Err(DidError::Input(format!(
                "feature matrix must be non-empty, got {num_frames} x {dim}"
            )));
        }
        if frames.len() != num_frames * dim {
            return Err(DidError::Dimension(format!(
                "{} values cannot fill {num_frames} x {dim}",
                frames.len()
            )));
        }
        Ok(Self {
            frames,
            num_frames,
            dim,
            frame_length_ms: 25,
            frame_shift_ms: 10,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(DidError::Dimension("ragged feature rows".into()));
        }
        Self::new(rows.concat(), rows.len(), dim)
    }

    pub fn with_timing(mut self, frame_length_ms: u16, frame_shift_ms: u16) -> Self {
        self.frame_length_ms = frame_length_ms;
        self.frame_shift_ms = frame_shift_ms;
        self
    }

    pub fn num_frames(&self) -> usize {
        self.num_frames
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        &self.frames[t * self.dim..(t + 1) * self.dim]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.frames
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.frames
    }

    pub fn to_tensor(&self) -> did_tensor::Tensor {
        did_tensor::Tensor::new(vec![self.num_frames, self.dim], self.frames.clone())
            .expect("validated extents")
    }
}
