//! Transformer and CNN utterance classifiers.

mod checkpoint;
mod cnn;
mod params;
mod positional;
mod transformer;

use std::fmt;
use std::str::FromStr;

use did_tensor::{Tape, Var};
use rand::{Rng, RngCore};

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use cnn::{CnnConfig, CnnModel};
pub use params::ParamStore;
pub use positional::positional_encoding;
pub use transformer::{mha, stats_pool, MhaVars, TransformerConfig, TransformerModel};

use crate::error::{DidError, Result};
use crate::features::{stack_downsample, FeatureMatrix};
use crate::kv::Pairs;

/// Temporal pooling before the classification head.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Pooling {
    Mean,
    /// Per-dimension mean and standard deviation, concatenated.
    #[default]
    MeanStd,
}

impl fmt::Display for Pooling {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Pooling::Mean => "mean",
            Pooling::MeanStd => "mean_std",
        })
    }
}

impl FromStr for Pooling {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "mean" => Ok(Pooling::Mean),
            "mean_std" => Ok(Pooling::MeanStd),
            other => Err(format!("unknown pooling {other:?} (mean | mean_std)")),
        }
    }
}

/// Frame stacking applied to front-end features before the network.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Stacking {
    pub stack_factor: usize,
    pub downsample_factor: usize,
}

impl Stacking {
    pub const NONE: Stacking = Stacking {
        stack_factor: 1,
        downsample_factor: 1,
    };
}

#[derive(Clone, Debug)]
pub enum Network {
    Transformer(TransformerModel),
    Cnn(CnnModel),
}

impl Network {
    pub fn kind(&self) -> &'static str {
        match self {
            Network::Transformer(_) => "transformer",
            Network::Cnn(_) => "cnn",
        }
    }

    pub fn params(&self) -> &ParamStore {
        match self {
            Network::Transformer(m) => m.params(),
            Network::Cnn(m) => m.params(),
        }
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        match self {
            Network::Transformer(m) => m.params_mut(),
            Network::Cnn(m) => m.params_mut(),
        }
    }

    pub fn num_classes(&self) -> usize {
        match self {
            Network::Transformer(m) => m.config().num_classes,
            Network::Cnn(m) => m.config().num_classes,
        }
    }
}

/// A network together with its class names and input stacking, i.e.
/// everything needed to turn front-end features into class scores.
#[derive(Clone, Debug)]
pub struct Classifier {
    pub network: Network,
    pub classes: Vec<String>,
    pub stacking: Stacking,
}

impl Classifier {
    pub fn transformer<R: Rng>(
        cfg: TransformerConfig,
        stacking: Stacking,
        classes: Vec<String>,
        rng: &mut R,
    ) -> Result<Self> {
        Self::check_classes(&classes, cfg.num_classes)?;
        let model = TransformerModel::new(cfg, rng)?;
        Ok(Self {
            network: Network::Transformer(model),
            classes,
            stacking,
        })
    }

    pub fn cnn<R: Rng>(cfg: CnnConfig, classes: Vec<String>, rng: &mut R) -> Result<Self> {
        Self::check_classes(&classes, cfg.num_classes)?;
        let model = CnnModel::new(cfg, rng)?;
        Ok(Self {
            network: Network::Cnn(model),
            classes,
            stacking: Stacking::NONE,
        })
    }

    fn check_classes(classes: &[String], expected: usize) -> Result<()> {
        if classes.len() != expected {
            return Err(DidError::Config(format!(
                "{} class names given for a {expected}-class model",
                classes.len()
            )));
        }
        if classes
            .iter()
            .any(|c| c.is_empty() || c.contains([',', '\t', '\n']))
        {
            return Err(DidError::Config(
                "class names must be non-empty and free of commas, tabs and newlines".into(),
            ));
        }
        Ok(())
    }

    pub fn params(&self) -> &ParamStore {
        self.network.params()
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        self.network.params_mut()
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    /// Applies the input stacking to front-end features.
    pub fn prepare(&self, feats: &FeatureMatrix) -> Result<FeatureMatrix> {
        let s = self.stacking;
        if s == Stacking::NONE {
            return Ok(feats.clone());
        }
        stack_downsample(feats, s.stack_factor, s.downsample_factor)
    }

    /// Logits for already prepared features.
    pub fn forward<'t>(
        &self,
        tape: &'t Tape,
        p: &[Var<'t>],
        prepared: &FeatureMatrix,
        rng: Option<&mut dyn RngCore>,
    ) -> Result<Var<'t>> {
        match &self.network {
            Network::Transformer(m) => m.forward(tape, p, prepared, rng),
            Network::Cnn(m) => m.forward(tape, p, prepared, rng),
        }
    }

    /// Posterior class probabilities for one utterance of front-end features.
    pub fn posteriors(&self, feats: &FeatureMatrix) -> Result<Vec<f64>> {
        let prepared = self.prepare(feats)?;
        let tape = Tape::no_grad();
        let p = self.params().bind(&tape);
        let logits = self.forward(&tape, &p, &prepared, None)?;
        Ok(logits.softmax(0)?.data().to_vec())
    }

    pub(crate) fn config_pairs(&self) -> Pairs {
        let mut p = Pairs::new("checkpoint");
        p.insert("kind", self.network.kind());
        match &self.network {
            Network::Transformer(m) => m.config().to_pairs(&mut p),
            Network::Cnn(m) => m.config().to_pairs(&mut p),
        }
        p.insert("stack_factor", self.stacking.stack_factor);
        p.insert("downsample_factor", self.stacking.downsample_factor);
        p.insert_list("classes", &self.classes);
        p
    }
}

/// Finite-difference check of `d cross_entropy / d params` for one utterance
/// of prepared features, probing every `stride`-th entry of each parameter.
pub fn gradcheck_classifier(
    model: &Classifier,
    prepared: &FeatureMatrix,
    label: usize,
    stride: usize,
) -> Result<did_tensor::gradcheck::GradCheckReport> {
    use did_tensor::gradcheck::{check_gradients_strided, DEFAULT_STEP};
    use did_tensor::TensorError;

    let report =
        check_gradients_strided(model.params().tensors(), DEFAULT_STEP, stride, |tape, p| {
            let logits = model
                .forward(tape, p, prepared, None)
                .map_err(|e| match e {
                    DidError::Tensor(t) => t,
                    other => TensorError::Contract(other.to_string()),
                })?;
            logits.cross_entropy(label)
        })?;
    Ok(report)
}

/// End-to-end gradient checks of small transformer (both poolings) and CNN
/// classifiers on a random 10-frame utterance, every parameter entry probed.
pub fn model_gradcheck_suite(
    seed: u64,
    stride: usize,
) -> Result<Vec<(String, did_tensor::gradcheck::GradCheckReport)>> {
    let classes: Vec<String> = (0..3).map(|i| format!("c{i}")).collect();
    // Long enough for the CNN's 11-frame receptive field.
    let feats = |dim: usize, rng: &mut crate::rng::DidRng| {
        let data = (0..14 * dim).map(|_| rng.random_range(-1.5..1.5)).collect();
        FeatureMatrix::new(data, 14, dim)
    };
    let mut rng = crate::rng::derive_rng(seed, "gradcheck.model");
    let mut out = Vec::new();
    for pooling in [Pooling::MeanStd, Pooling::Mean] {
        let cfg = TransformerConfig {
            num_layers: 2,
            num_heads: 2,
            d_model: 8,
            d_inner: 16,
            input_dim: 12,
            fc_dims: [8, 6],
            num_classes: 3,
            pooling,
            ..TransformerConfig::default()
        };
        let model = Classifier::transformer(cfg, Stacking::NONE, classes.clone(), &mut rng)?;
        let x = feats(12, &mut rng)?;
        out.push((
            format!("transformer/{pooling}"),
            gradcheck_classifier(&model, &x, 1, stride)?,
        ));
    }
    let cfg = CnnConfig {
        input_dim: 6,
        channels: vec![5, 4, 4, 6],
        kernels: vec![5, 3, 3, 3],
        strides: vec![1, 1, 1, 1],
        fc_dims: vec![5],
        num_classes: 3,
        ..CnnConfig::default()
    };
    let model = Classifier::cnn(cfg, classes, &mut rng)?;
    let x = feats(6, &mut rng)?;
    out.push((
        "cnn".to_string(),
        gradcheck_classifier(&model, &x, 2, stride)?,
    ));
    Ok(out)
}
