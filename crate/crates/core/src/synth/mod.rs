//! Synthetic corpus whose classes differ only in long-range structure.
//!
//! Every utterance is a sequence of short two-tone segments. Segments are
//! grouped into blocks of `lag / segment` segments and each block is played
//! twice in a row, so the frame at `t` recurs at `t + lag` for half of all
//! frames. The lag is the only class-specific property: tone choice is
//! balanced within each utterance and identical in distribution across
//! classes, so any window much shorter than the lag looks the same whatever
//! the class.

mod oracle;

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::Serialize;

pub use oracle::{
    class_mean_spread, lag_oracle, lag_similarity, window_descriptor, window_oracle, LagOracle,
    WindowOracle,
};

use crate::error::{DidError, Result};
use crate::features::{write_manifest, write_wav, AudioBuffer, ManifestEntry};
use crate::kv::Pairs;
use crate::rng::{derive_rng, DidRng};

/// Low- and high-register carrier frequencies; each segment sounds one of
/// each.
pub const LOW_TONES: [f64; 8] = [300.0, 380.0, 470.0, 560.0, 660.0, 770.0, 880.0, 1000.0];
pub const HIGH_TONES: [f64; 8] = [
    1300.0, 1550.0, 1800.0, 2100.0, 2450.0, 2800.0, 3200.0, 3650.0,
];

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    pub num_classes: usize,
    /// Utterances per class and duration band in each split.
    pub train_per_class: usize,
    pub dev_per_class: usize,
    pub test_per_class: usize,
    /// `(min, max)` duration in seconds of each band.
    pub bands: Vec<(f64, f64)>,
    pub sample_rate: u32,
    /// Repetition lag in frames of each class.
    pub lags: Vec<usize>,
    /// `+1` repeats a block verbatim, `-1` with inverted polarity.
    pub signs: Vec<i8>,
    pub segment_ms: usize,
    pub snr_db: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            num_classes: 4,
            train_per_class: 16,
            dev_per_class: 4,
            test_per_class: 8,
            bands: vec![(3.0, 4.8), (8.0, 12.0), (20.5, 22.0)],
            sample_rate: 16000,
            lags: vec![50, 70, 90, 110],
            signs: vec![1, 1, 1, 1],
            segment_ms: 100,
            snr_db: 20.0,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Dev, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(DidError::Config(m));
        if self.num_classes < 2 {
            return fail(format!("need at least 2 classes, got {}", self.num_classes));
        }
        if self.lags.len() != self.num_classes || self.signs.len() != self.num_classes {
            return fail(format!(
                "{} classes need as many lags and signs, got {} and {}",
                self.num_classes,
                self.lags.len(),
                self.signs.len()
            ));
        }
        if self.signs.iter().any(|s| s.abs() != 1) {
            return fail("signs must be +1 or -1".into());
        }
        let seg_frames = self.segment_ms / 10;
        if self.segment_ms == 0 || !self.segment_ms.is_multiple_of(10) {
            return fail(format!(
                "segment_ms {} must be a positive multiple of 10",
                self.segment_ms
            ));
        }
        for &l in &self.lags {
            if l % seg_frames != 0 || l / seg_frames < 2 {
                return fail(format!(
                    "lag {l} must be a multiple of the {seg_frames}-frame segment spanning at least 2 segments"
                ));
            }
        }
        let mut sorted = self.lags.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.lags.len() {
            return fail("class lags must be distinct".into());
        }
        let longest = 2.0 * *sorted.last().expect("non-empty") as f64 / 100.0;
        for &(lo, hi) in &self.bands {
            if !(lo > 0.0 && hi >= lo) {
                return fail(format!("bad duration band ({lo}, {hi})"));
            }
            if lo < longest {
                return fail(format!(
                    "band starting at {lo} s cannot hold one repetition of a {longest} s block pair"
                ));
            }
        }
        if self.bands.is_empty() || self.sample_rate == 0 {
            return fail("need at least one band and a positive sample rate".into());
        }
        Ok(())
    }

    pub fn per_class(&self, split: Split) -> usize {
        match split {
            Split::Train => self.train_per_class,
            Split::Dev => self.dev_per_class,
            Split::Test => self.test_per_class,
        }
    }

    pub fn class_names(&self) -> Vec<String> {
        (0..self.num_classes).map(|c| format!("class{c}")).collect()
    }

    pub fn to_pairs(&self, out: &mut Pairs) {
        out.insert("num_classes", self.num_classes);
        out.insert("train_per_class", self.train_per_class);
        out.insert("dev_per_class", self.dev_per_class);
        out.insert("test_per_class", self.test_per_class);
        let bands: Vec<String> = self.bands.iter().map(|(a, b)| format!("{a}-{b}")).collect();
        out.insert_list("bands", &bands);
        out.insert("sample_rate", self.sample_rate);
        out.insert_list("lags", &self.lags);
        out.insert_list("signs", &self.signs);
        out.insert("segment_ms", self.segment_ms);
        out.insert("snr_db", self.snr_db);
    }

    pub fn from_pairs(p: &mut Pairs) -> Result<Self> {
        let d = Self::default();
        let default_bands: Vec<String> = d.bands.iter().map(|(a, b)| format!("{a}-{b}")).collect();
        let bands = p
            .take_list::<String>("bands", default_bands)?
            .iter()
            .map(|b| {
                let (lo, hi) = b
                    .split_once('-')
                    .ok_or_else(|| DidError::Config(format!("band {b:?} is not MIN-MAX")))?;
                let parse = |s: &str| {
                    s.trim()
                        .parse::<f64>()
                        .map_err(|_| DidError::Config(format!("band {b:?} is not MIN-MAX")))
                };
                Ok((parse(lo)?, parse(hi)?))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            num_classes: p.take("num_classes", d.num_classes)?,
            train_per_class: p.take("train_per_class", d.train_per_class)?,
            dev_per_class: p.take("dev_per_class", d.dev_per_class)?,
            test_per_class: p.take("test_per_class", d.test_per_class)?,
            bands,
            sample_rate: p.take("sample_rate", d.sample_rate)?,
            lags: p.take_list("lags", d.lags)?,
            signs: p.take_list("signs", d.signs)?,
            segment_ms: p.take("segment_ms", d.segment_ms)?,
            snr_db: p.take("snr_db", d.snr_db)?,
            seed: d.seed,
        })
    }
}

/// One utterance's identity before synthesis.
#[derive(Clone, Debug)]
struct Plan {
    split: Split,
    class: usize,
    band: usize,
    index: usize,
}

/// Synthesizes one utterance of class `class` with `num_samples` samples.
pub fn synthesize<R: Rng>(
    spec: &SynthSpec,
    class: usize,
    num_samples: usize,
    rng: &mut R,
) -> Result<AudioBuffer> {
    let sr = f64::from(spec.sample_rate);
    let seg_len = spec.segment_ms * spec.sample_rate as usize / 1000;
    let block = spec.lags[class] / (spec.segment_ms / 10);
    let num_segments = num_samples.div_ceil(seg_len);

    // Balanced tone schedule: cycle through shuffled decks of all pairs.
    let combos: Vec<(usize, usize)> = (0..LOW_TONES.len())
        .flat_map(|a| (0..HIGH_TONES.len()).map(move |b| (a, b)))
        .collect();
    let mut deck = Vec::new();
    let mut fresh = Vec::new();
    let blocks = num_segments.div_ceil(2 * block);
    for _ in 0..blocks * block {
        if deck.is_empty() {
            deck = combos.clone();
            deck.shuffle(rng);
        }
        let (a, b) = deck.pop().expect("refilled");
        let amp_lo = rng.random_range(0.6..1.0);
        let amp_hi = rng.random_range(0.6..1.0);
        let ph_lo = rng.random_range(0.0..std::f64::consts::TAU);
        let ph_hi = rng.random_range(0.0..std::f64::consts::TAU);
        fresh.push((a, b, amp_lo, amp_hi, ph_lo, ph_hi));
    }

    let fade = (0.005 * sr) as usize;
    let render = |seg: &(usize, usize, f64, f64, f64, f64), out: &mut [f64]| {
        let (a, b, amp_lo, amp_hi, ph_lo, ph_hi) = *seg;
        for (i, o) in out.iter_mut().enumerate() {
            let t = i as f64 / sr;
            let env = if i < fade {
                0.5 - 0.5 * (std::f64::consts::PI * i as f64 / fade as f64).cos()
            } else if seg_len - i <= fade {
                0.5 - 0.5 * (std::f64::consts::PI * (seg_len - i) as f64 / fade as f64).cos()
            } else {
                1.0
            };
            *o = env
                * 0.25
                * (amp_lo * (std::f64::consts::TAU * LOW_TONES[a] * t + ph_lo).sin()
                    + amp_hi * (std::f64::consts::TAU * HIGH_TONES[b] * t + ph_hi).sin());
        }
    };

    let sign = f64::from(spec.signs[class]);
    let mut samples = vec![0.0; num_segments * seg_len];
    for s in 0..num_segments {
        let (blk, within) = (s / (2 * block), s % (2 * block));
        let src = &fresh[blk * block + within % block];
        let out = &mut samples[s * seg_len..(s + 1) * seg_len];
        render(src, out);
        if within >= block {
            out.iter_mut().for_each(|v| *v *= sign);
        }
    }
    samples.truncate(num_samples);

    let power = samples.iter().map(|v| v * v).sum::<f64>() / samples.len() as f64;
    let noise_sd = (power / 10f64.powf(spec.snr_db / 10.0)).sqrt();
    let noise = Normal::new(0.0, noise_sd).map_err(|e| DidError::Numeric(e.to_string()))?;
    for v in &mut samples {
        *v = (*v + noise.sample(rng)).clamp(-1.0, 1.0);
    }
    AudioBuffer::new(samples, spec.sample_rate)
}

/// Paths written by [`generate`].
#[derive(Clone, Debug, Serialize)]
pub struct GeneratedCorpus {
    pub train: PathBuf,
    pub dev: PathBuf,
    pub test: PathBuf,
    pub classes: Vec<String>,
    pub utterances: usize,
}

impl GeneratedCorpus {
    pub fn manifest(&self, split: Split) -> &Path {
        match split {
            Split::Train => &self.train,
            Split::Dev => &self.dev,
            Split::Test => &self.test,
        }
    }
}

fn utterance_rng(seed: u64, p: &Plan) -> DidRng {
    derive_rng(
        seed,
        &format!(
            "synth.{}.{}.{}.{}",
            p.split.name(),
            p.class,
            p.band,
            p.index
        ),
    )
}

/// Writes WAV files under `out_dir/wav/<split>/` and one manifest per split,
/// sorted by utterance id. Utterance ids carry no class information.
pub fn generate(spec: &SynthSpec, out_dir: &Path) -> Result<GeneratedCorpus> {
    spec.validate()?;
    let names = spec.class_names();
    let mut total = 0;
    let mut paths = Vec::new();
    for split in Split::ALL {
        let wav_dir = out_dir.join("wav").join(split.name());
        std::fs::create_dir_all(&wav_dir).map_err(|e| DidError::io(&wav_dir, e))?;
        let mut plans: Vec<Plan> = (0..spec.num_classes)
            .flat_map(|class| {
                (0..spec.bands.len()).flat_map(move |band| {
                    (0..spec.per_class(split)).map(move |index| Plan {
                        split,
                        class,
                        band,
                        index,
                    })
                })
            })
            .collect();
        plans.shuffle(&mut derive_rng(
            spec.seed,
            &format!("synth.ids.{}", split.name()),
        ));
        let mut entries = plans
            .par_iter()
            .enumerate()
            .map(|(n, plan)| {
                let mut rng = utterance_rng(spec.seed, plan);
                let (lo, hi) = spec.bands[plan.band];
                let secs = if hi > lo {
                    rng.random_range(lo..hi)
                } else {
                    lo
                };
                let num_samples = (secs * 100.0).round() as usize * spec.sample_rate as usize / 100;
                let audio = synthesize(spec, plan.class, num_samples, &mut rng)?;
                let utt_id = format!("{}-{n:05}", split.name());
                let path = wav_dir.join(format!("{utt_id}.wav"));
                write_wav(&path, &audio)?;
                Ok(ManifestEntry {
                    utt_id,
                    path,
                    label: names[plan.class].clone(),
                    duration: audio.duration_seconds(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        entries.sort_by(|a, b| a.utt_id.cmp(&b.utt_id));
        total += entries.len();
        let manifest = out_dir.join(format!("{}.tsv", split.name()));
        write_manifest(&manifest, &entries)?;
        paths.push(manifest);
    }
    let [train, dev, test]: [PathBuf; 3] = paths.try_into().expect("three splits");
    Ok(GeneratedCorpus {
        train,
        dev,
        test,
        classes: names,
        utterances: total,
    })
}
