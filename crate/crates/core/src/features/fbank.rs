use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use super::{AudioBuffer, FeatureMatrix, FrontendConfig};
use crate::error::{DidError, Result};

const LOG_FLOOR: f64 = 1e-10;
const VAR_FLOOR: f64 = 1e-8;

pub(crate) fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub(crate) fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular mel filters over the bins of an `n_fft`-point power spectrum.
#[derive(Clone, Debug)]
pub struct MelFilterbank {
    n_fft: usize,
    /// `(first_bin, weights)` per filter; weights cover consecutive bins.
    filters: Vec<(usize, Vec<f64>)>,
}

impl MelFilterbank {
    pub fn new(n_mels: usize, n_fft: usize, sample_rate: u32, low_hz: f64) -> Result<Self> {
        let nyquist = f64::from(sample_rate) / 2.0;
        if !(0.0..nyquist).contains(&low_hz) {
            return Err(DidError::Config(format!(
                "low frequency {low_hz} Hz must lie in [0, {nyquist})"
            )));
        }
        let (lo, hi) = (hz_to_mel(low_hz), hz_to_mel(nyquist));
        let edges: Vec<f64> = (0..n_mels + 2)
            .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (n_mels + 1) as f64))
            .collect();
        let bin_hz = f64::from(sample_rate) / n_fft as f64;
        let n_bins = n_fft / 2 + 1;
        let filters = edges
            .windows(3)
            .map(|w| {
                let (left, centre, right) = (w[0], w[1], w[2]);
                let weight = |k: usize| {
                    let f = k as f64 * bin_hz;
                    if f <= left || f >= right {
                        0.0
                    } else if f <= centre {
                        (f - left) / (centre - left)
                    } else {
                        (right - f) / (right - centre)
                    }
                };
                let first = (0..n_bins).find(|&k| weight(k) > 0.0).unwrap_or(0);
                let weights: Vec<f64> = (first..n_bins)
                    .map(weight)
                    .take_while(|&w| w > 0.0)
                    .collect();
                (first, weights)
            })
            .collect();
        Ok(Self { n_fft, filters })
    }

    pub fn n_fft(&self) -> usize {
        self.n_fft
    }

    pub fn len(&self) -> usize {
        self.filters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.filters.is_empty()
    }

    /// Weight of filter `m` at spectrum bin `k`.
    pub fn weight(&self, m: usize, k: usize) -> f64 {
        let (first, w) = &self.filters[m];
        k.checked_sub(*first)
            .and_then(|i| w.get(i))
            .copied()
            .unwrap_or(0.0)
    }

    /// Filter energies of a power spectrum with `n_fft / 2 + 1` bins.
    pub fn apply(&self, power: &[f64], out: &mut [f64]) {
        for ((first, w), o) in self.filters.iter().zip(out.iter_mut()) {
            *o = w.iter().zip(&power[*first..]).map(|(a, b)| a * b).sum();
        }
    }
}

fn hamming(len: usize) -> Vec<f64> {
    if len == 1 {
        return vec![1.0];
    }
    (0..len)
        .map(|n| 0.54 - 0.46 * (2.0 * std::f64::consts::PI * n as f64 / (len - 1) as f64).cos())
        .collect()
}

/// Number of frames produced for `num_samples` samples.
pub(crate) fn frame_count(num_samples: usize, frame_len: usize, shift: usize) -> Option<usize> {
    (num_samples >= frame_len).then(|| 1 + (num_samples - frame_len) / shift)
}

struct Analyzer {
    fft: Arc<dyn Fft<f64>>,
    window: Vec<f64>,
    bank: MelFilterbank,
    frame_len: usize,
    shift: usize,
}

impl Analyzer {
    fn new(cfg: &FrontendConfig, sample_rate: u32) -> Result<Self> {
        cfg.validate()?;
        let frame_len = cfg.frame_length_samples(sample_rate);
        let shift = cfg.frame_shift_samples(sample_rate);
        if frame_len == 0 || shift == 0 {
            return Err(DidError::Config(format!(
                "sample rate {sample_rate} Hz gives an empty frame or shift"
            )));
        }
        let n_fft = frame_len.next_power_of_two();
        Ok(Self {
            fft: FftPlanner::new().plan_fft_forward(n_fft),
            window: hamming(frame_len),
            bank: MelFilterbank::new(cfg.n_mels, n_fft, sample_rate, cfg.low_freq_hz)?,
            frame_len,
            shift,
        })
    }
}

/// Log mel-filterbank energies of Hamming-windowed frames, optionally
/// followed by per-utterance CMVN when `cfg.cmvn` is set.
pub fn fbank(audio: &AudioBuffer, cfg: &FrontendConfig) -> Result<FeatureMatrix> {
    let an = Analyzer::new(cfg, audio.sample_rate())?;
    let samples = audio.samples();
    let frames = frame_count(samples.len(), an.frame_len, an.shift).ok_or_else(|| {
        DidError::Input(format!(
            "audio of {} samples is shorter than one {}-sample frame",
            samples.len(),
            an.frame_len
        ))
    })?;
    let n_fft = an.bank.n_fft();
    let n_mels = cfg.n_mels;
    let mut out = vec![0.0; frames * n_mels];
    let mut buf = vec![Complex::new(0.0, 0.0); n_fft];
    let mut scratch = vec![Complex::new(0.0, 0.0); an.fft.get_inplace_scratch_len()];
    let mut power = vec![0.0; n_fft / 2 + 1];
    for (t, row) in out.chunks_exact_mut(n_mels).enumerate() {
        let frame = &samples[t * an.shift..t * an.shift + an.frame_len];
        for (i, slot) in buf.iter_mut().enumerate() {
            let v = if i < an.frame_len {
                frame[i] * an.window[i]
            } else {
                0.0
            };
            *slot = Complex::new(v, 0.0);
        }
        an.fft.process_with_scratch(&mut buf, &mut scratch);
        for (p, c) in power.iter_mut().zip(&buf) {
            *p = c.norm_sqr();
        }
        an.bank.apply(&power, row);
        for v in row.iter_mut() {
            *v = v.max(LOG_FLOOR).ln();
        }
    }
    let feats = FeatureMatrix::new(out, frames, n_mels)?
        .with_timing(cfg.frame_length_ms, cfg.frame_shift_ms);
    if cfg.cmvn {
        cmvn(&feats)
    } else {
        Ok(feats)
    }
}

/// Per-utterance mean and variance normalization of every dimension, using
/// the population variance floored at `1e-8`.
pub fn cmvn(feats: &FeatureMatrix) -> Result<FeatureMatrix> {
    let (t, d) = (feats.num_frames(), feats.dim());
    if t < 2 {
        return Err(DidError::Input(format!(
            "CMVN needs at least 2 frames, got {t}"
        )));
    }
    let x = feats.as_slice();
    let mut out = feats.clone();
    let y = out.as_mut_slice();
    for j in 0..d {
        let mean = (0..t).map(|i| x[i * d + j]).sum::<f64>() / t as f64;
        let var = (0..t).map(|i| (x[i * d + j] - mean).powi(2)).sum::<f64>() / t as f64;
        let scale = var.max(VAR_FLOOR).sqrt();
        for i in 0..t {
            y[i * d + j] = (x[i * d + j] - mean) / scale;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mel_scale_round_trips() {
        for hz in [0.0, 20.0, 700.0, 1000.0, 8000.0] {
            assert!((mel_to_hz(hz_to_mel(hz)) - hz).abs() < 1e-9);
        }
        assert!((hz_to_mel(700.0) - 2595.0 * 2f64.log10()).abs() < 1e-12);
    }

    #[test]
    fn filters_are_ordered_triangles_below_one() {
        let bank = MelFilterbank::new(80, 512, 16000, 20.0).unwrap();
        assert_eq!(bank.len(), 80);
        let mut last_first = 0;
        for (first, w) in &bank.filters {
            assert!(!w.is_empty(), "every filter covers at least one bin");
            assert!(w.iter().all(|&v| v > 0.0 && v <= 1.0));
            assert!(*first >= last_first);
            last_first = *first;
        }
    }

    #[test]
    fn frame_count_formula() {
        assert_eq!(frame_count(16000, 400, 160), Some(98));
        assert_eq!(frame_count(400, 400, 160), Some(1));
        assert_eq!(frame_count(399, 400, 160), None);
    }

    #[test]
    fn cmvn_two_point_example() {
        let f = FeatureMatrix::new(vec![0.0, 2.0], 2, 1).unwrap();
        assert_eq!(cmvn(&f).unwrap().as_slice(), &[-1.0, 1.0]);
        let one = FeatureMatrix::new(vec![1.0], 1, 1).unwrap();
        assert!(matches!(cmvn(&one), Err(DidError::Input(_))));
    }
}
