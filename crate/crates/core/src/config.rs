//! The sectioned `key = value` run configuration.
//!
//! ```text
//! [frontend]
//! n_mels = 80
//! [train]
//! learning_rate = 0.001
//! ```
//!
//! Every key can also be set as a dotted `section.key` override, which wins
//! over the file. Unknown sections and keys are errors.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{DidError, Result};
use crate::features::FrontendConfig;
use crate::kv::Pairs;
use crate::models::{CnnConfig, Stacking, TransformerConfig};
use crate::synth::SynthSpec;
use crate::training::TrainConfig;

pub const SECTIONS: [&str; 6] = ["frontend", "transformer", "cnn", "train", "eval", "synth"];

/// Settings of the benchmark and report commands.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalConfig {
    /// Timed repetitions per RTF measurement; the median is reported.
    pub repetitions: usize,
    /// Seconds of synthetic audio for the RTF benchmark.
    pub benchmark_seconds: f64,
    /// Probe every n-th parameter entry in the model gradient check.
    pub gradcheck_stride: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            repetitions: 5,
            benchmark_seconds: 30.0,
            gradcheck_stride: 1,
        }
    }
}

impl EvalConfig {
    fn to_pairs(&self, out: &mut Pairs) {
        out.insert("repetitions", self.repetitions);
        out.insert("benchmark_seconds", self.benchmark_seconds);
        out.insert("gradcheck_stride", self.gradcheck_stride);
    }

    fn from_pairs(p: &mut Pairs) -> Result<Self> {
        let d = Self::default();
        Ok(Self {
            repetitions: p.take("repetitions", d.repetitions)?,
            benchmark_seconds: p.take("benchmark_seconds", d.benchmark_seconds)?,
            gradcheck_stride: p.take("gradcheck_stride", d.gradcheck_stride)?,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct RunConfig {
    pub frontend: FrontendConfig,
    pub transformer: TransformerConfig,
    pub cnn: CnnConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub synth: SynthSpec,
}

/// Raw `section -> key -> value` text before typing.
#[derive(Clone, Debug, Default)]
pub struct RawConfig {
    sections: BTreeMap<String, Pairs>,
}

impl RawConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut raw = Self::default();
        let mut current: Option<String> = None;
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |why: &str| DidError::Config(format!("line {}: {why}: {line:?}", n + 1));
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                let name = name.trim();
                if !SECTIONS.contains(&name) {
                    return Err(bad("unknown section"));
                }
                current = Some(name.to_string());
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| bad("expected key = value"))?;
            let section = current
                .as_deref()
                .ok_or_else(|| bad("key outside any section"))?;
            raw.set(section, key.trim(), value.trim())?;
        }
        Ok(raw)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| DidError::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            DidError::Config(m) => DidError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    fn set(&mut self, section: &str, key: &str, value: &str) -> Result<()> {
        if !SECTIONS.contains(&section) {
            return Err(DidError::Config(format!("unknown section {section:?}")));
        }
        if key.is_empty() {
            return Err(DidError::Config(format!("empty key in section {section}")));
        }
        self.sections
            .entry(section.to_string())
            .or_insert_with(|| Pairs::new(section))
            .set_raw(key, value);
        Ok(())
    }

    /// Applies a `section.key` override.
    pub fn set_dotted(&mut self, dotted: &str, value: &str) -> Result<()> {
        let (section, key) = dotted
            .split_once('.')
            .ok_or_else(|| DidError::Config(format!("override {dotted:?} is not section.key")))?;
        self.set(section, key, value)
    }

    fn take(&mut self, section: &str) -> Pairs {
        self.sections
            .remove(section)
            .unwrap_or_else(|| Pairs::new(section))
    }

    pub fn build(mut self) -> Result<RunConfig> {
        fn typed<T>(
            raw: &mut RawConfig,
            section: &str,
            f: impl FnOnce(&mut Pairs) -> Result<T>,
        ) -> Result<T> {
            let mut p = raw.take(section);
            let value = f(&mut p)?;
            p.finish()?;
            Ok(value)
        }
        let cfg = RunConfig {
            frontend: typed(&mut self, "frontend", FrontendConfig::from_pairs)?,
            transformer: typed(&mut self, "transformer", TransformerConfig::from_pairs)?,
            cnn: typed(&mut self, "cnn", CnnConfig::from_pairs)?,
            train: typed(&mut self, "train", TrainConfig::from_pairs)?,
            eval: typed(&mut self, "eval", EvalConfig::from_pairs)?,
            synth: typed(&mut self, "synth", SynthSpec::from_pairs)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        RawConfig::parse(text)?.build()
    }

    pub fn validate(&self) -> Result<()> {
        self.frontend.validate()?;
        self.transformer.validate()?;
        self.cnn.validate()?;
        self.train.validate()?;
        self.synth.validate()?;
        if self.transformer.input_dim != self.frontend.stacked_dim() {
            return Err(DidError::Config(format!(
                "transformer.input_dim {} must equal frontend.n_mels x frontend.stack_factor = {}",
                self.transformer.input_dim,
                self.frontend.stacked_dim()
            )));
        }
        if self.cnn.input_dim != self.frontend.n_mels {
            return Err(DidError::Config(format!(
                "cnn.input_dim {} must equal frontend.n_mels {}",
                self.cnn.input_dim, self.frontend.n_mels
            )));
        }
        if self.eval.repetitions == 0 || self.eval.gradcheck_stride == 0 {
            return Err(DidError::Config(
                "eval.repetitions and eval.gradcheck_stride must be positive".into(),
            ));
        }
        if self.eval.benchmark_seconds.is_nan() || self.eval.benchmark_seconds <= 0.0 {
            return Err(DidError::Config(
                "eval.benchmark_seconds must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn stacking(&self) -> Stacking {
        Stacking {
            stack_factor: self.frontend.stack_factor,
            downsample_factor: self.frontend.downsample_factor,
        }
    }

    /// The effective configuration in the file format; parsing it back
    /// yields an equal value.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for section in SECTIONS {
            let mut p = Pairs::new(section);
            match section {
                "frontend" => self.frontend.to_pairs(&mut p),
                "transformer" => self.transformer.to_pairs(&mut p),
                "cnn" => self.cnn.to_pairs(&mut p),
                "train" => self.train.to_pairs(&mut p),
                "eval" => self.eval.to_pairs(&mut p),
                _ => self.synth.to_pairs(&mut p),
            }
            out.push_str(&format!("[{section}]\n"));
            for (k, v) in p.iter() {
                out.push_str(&format!("{k} = {v}\n"));
            }
            out.push('\n');
        }
        out
    }
}
