use std::f64::consts::PI;

use did_core::features::{
    cmvn, fbank, read_features, stack_downsample, write_features, AudioBuffer, FeatureMatrix,
    FrontendConfig,
};
use did_core::DidError;
use proptest::prelude::*;

fn raw_cfg() -> FrontendConfig {
    FrontendConfig {
        cmvn: false,
        ..FrontendConfig::default()
    }
}

fn tone(freq: f64, seconds: f64, sr: u32) -> AudioBuffer {
    let n = (seconds * f64::from(sr)) as usize;
    let s = (0..n)
        .map(|i| 0.5 * (2.0 * PI * freq * i as f64 / f64::from(sr)).sin())
        .collect();
    AudioBuffer::new(s, sr).unwrap()
}

#[test]
fn one_second_gives_98_frames() {
    let f = fbank(&tone(440.0, 1.0, 16000), &FrontendConfig::default()).unwrap();
    assert_eq!(f.num_frames(), 98);
    assert_eq!(f.dim(), 80);
}

#[test]
fn short_audio_is_an_input_error() {
    let a = AudioBuffer::new(vec![0.1; 399], 16000).unwrap();
    assert!(matches!(fbank(&a, &raw_cfg()), Err(DidError::Input(_))));
}

#[test]
fn silence_gives_identical_floor_rows() {
    let a = AudioBuffer::new(vec![0.0; 8000], 16000).unwrap();
    let f = fbank(&a, &raw_cfg()).unwrap();
    let floor = 1e-10f64.ln();
    assert!(f.as_slice().iter().all(|&v| v == floor));
}

fn mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

/// Independent evaluation: direct O(N^2) DFT of the first frame and
/// triangles evaluated straight from their mel-spaced corner frequencies.
fn dft_oracle(samples: &[f64], sr: f64, n_mels: usize) -> Vec<f64> {
    let (len, n_fft) = (400usize, 512usize);
    let windowed: Vec<f64> = (0..len)
        .map(|n| samples[n] * (0.54 - 0.46 * (2.0 * PI * n as f64 / (len - 1) as f64).cos()))
        .collect();
    let power: Vec<f64> = (0..=n_fft / 2)
        .map(|k| {
            let (mut re, mut im) = (0.0, 0.0);
            for (n, x) in windowed.iter().enumerate() {
                let ang = -2.0 * PI * (k * n) as f64 / n_fft as f64;
                re += x * ang.cos();
                im += x * ang.sin();
            }
            re * re + im * im
        })
        .collect();
    let (lo, hi) = (mel(20.0), mel(sr / 2.0));
    let corner = |i: usize| {
        let m = lo + (hi - lo) * i as f64 / (n_mels + 1) as f64;
        700.0 * (10f64.powf(m / 2595.0) - 1.0)
    };
    (0..n_mels)
        .map(|m| {
            let (l, c, r) = (corner(m), corner(m + 1), corner(m + 2));
            let energy: f64 = power
                .iter()
                .enumerate()
                .map(|(k, p)| {
                    let f = k as f64 * sr / n_fft as f64;
                    let w = if f > l && f <= c {
                        (f - l) / (c - l)
                    } else if f > c && f < r {
                        (r - f) / (r - c)
                    } else {
                        0.0
                    };
                    w * p
                })
                .sum();
            energy.max(1e-10).ln()
        })
        .collect()
}

#[test]
fn tone_matches_direct_dft_and_peaks_at_its_band() {
    let audio = tone(1000.0, 0.1, 16000);
    let f = fbank(&audio, &raw_cfg()).unwrap();
    let oracle = dft_oracle(audio.samples(), 16000.0, 80);
    for (a, b) in f.frame(0).iter().zip(&oracle) {
        assert!((a - b).abs() < 1e-8, "{a} vs {b}");
    }
    let peak = (0..80)
        .max_by(|&a, &b| f.frame(0)[a].total_cmp(&f.frame(0)[b]))
        .unwrap();
    let (lo, hi) = (mel(20.0), mel(8000.0));
    let edge = |i: usize| 700.0 * (10f64.powf((lo + (hi - lo) * i as f64 / 81.0) / 2595.0) - 1.0);
    assert!(
        edge(peak) < 1000.0 && 1000.0 < edge(peak + 2),
        "peak filter {peak}"
    );
}

#[test]
fn cmvn_normalizes_and_is_idempotent() {
    let rows: Vec<Vec<f64>> = (0..30)
        .map(|t| {
            (0..5)
                .map(|d| ((t * 7 + d * 3) as f64).sin() * (d + 1) as f64)
                .collect()
        })
        .collect();
    let once = cmvn(&FeatureMatrix::from_rows(&rows).unwrap()).unwrap();
    let (t, d) = (once.num_frames(), once.dim());
    for j in 0..d {
        let mean = (0..t).map(|i| once.frame(i)[j]).sum::<f64>() / t as f64;
        let var = (0..t)
            .map(|i| (once.frame(i)[j] - mean).powi(2))
            .sum::<f64>()
            / t as f64;
        assert!(mean.abs() <= 1e-6 && (var - 1.0).abs() <= 1e-6);
    }
    let twice = cmvn(&once).unwrap();
    for (a, b) in once.as_slice().iter().zip(twice.as_slice()) {
        assert!((a - b).abs() <= 1e-6);
    }
}

#[test]
fn cmvn_constant_column_goes_to_zero() {
    let f = FeatureMatrix::new(vec![3.0, 1.0, 3.0, 2.0, 3.0, 3.0], 3, 2).unwrap();
    let out = cmvn(&f).unwrap();
    assert_eq!(out.frame(0)[0], 0.0);
    assert_eq!(out.frame(2)[0], 0.0);
}

fn indexed(t: usize, d: usize) -> FeatureMatrix {
    FeatureMatrix::new((0..t * d).map(|v| v as f64).collect(), t, d).unwrap()
}

#[test]
fn stacking_examples() {
    let out = stack_downsample(&indexed(12, 80), 4, 3).unwrap();
    assert_eq!((out.num_frames(), out.dim()), (4, 320));

    let f = indexed(5, 2);
    let out = stack_downsample(&f, 4, 3).unwrap();
    assert_eq!(out.num_frames(), 2);
    let expect: Vec<f64> = [3, 4, 4, 4]
        .iter()
        .flat_map(|&t| f.frame(t).to_vec())
        .collect();
    assert_eq!(out.frame(1), expect.as_slice());
}

#[test]
fn stacking_length_sweep() {
    for t in 1..=100 {
        let out = stack_downsample(&indexed(t, 80), 4, 3).unwrap();
        assert_eq!(out.num_frames(), t.div_ceil(3));
        assert_eq!(out.dim(), 320);
    }
}

#[test]
fn frame_count_sweep() {
    let cfg = raw_cfg();
    let mut samples = vec![0.0; 400];
    for extra in 0..=5000usize {
        if extra > 0 {
            samples.push(((extra as f64) * 0.3).sin() * 0.1);
        }
        let a = AudioBuffer::new(samples.clone(), 16000).unwrap();
        let f = fbank(&a, &cfg).unwrap();
        assert_eq!(
            f.num_frames(),
            1 + (400 + extra - 400) / 160,
            "extra {extra}"
        );
    }
}

#[test]
fn feature_file_round_trip_is_f32_exact() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.feat");
    let f = fbank(&tone(300.0, 0.5, 16000), &FrontendConfig::default()).unwrap();
    write_features(&path, &f).unwrap();
    let back = read_features(&path).unwrap();
    assert_eq!((back.num_frames(), back.dim()), (f.num_frames(), f.dim()));
    for (a, b) in back.as_slice().iter().zip(f.as_slice()) {
        assert_eq!(*a, f64::from(*b as f32));
    }
}

proptest! {
    #[test]
    fn stacking_is_pure_rearrangement(t in 1usize..60, d in 1usize..5, m in 1usize..6, n in 1usize..5) {
        let f = indexed(t, d);
        let out = stack_downsample(&f, m, n).unwrap();
        prop_assert_eq!(out.num_frames(), t.div_ceil(n));
        prop_assert_eq!(out.dim(), m * d);
        for (tp, row) in out.as_slice().chunks(m * d).enumerate() {
            for (j, chunk) in row.chunks(d).enumerate() {
                let src = (tp * n + j).min(t - 1);
                prop_assert_eq!(chunk, f.frame(src));
            }
        }
    }

    #[test]
    fn unit_stacking_is_identity(t in 1usize..40, d in 1usize..6) {
        let f = indexed(t, d);
        prop_assert_eq!(stack_downsample(&f, 1, 1).unwrap(), f);
    }

    #[test]
    fn cmvn_idempotent_on_random_input(vals in prop::collection::vec(-50.0f64..50.0, 12..60)) {
        let t = vals.len() / 3;
        let f = FeatureMatrix::new(vals[..t * 3].to_vec(), t, 3).unwrap();
        let once = cmvn(&f).unwrap();
        let twice = cmvn(&once).unwrap();
        for (a, b) in once.as_slice().iter().zip(twice.as_slice()) {
            prop_assert!((a - b).abs() <= 1e-6);
        }
    }
}
