use did_tensor::{Tape, Var};
use rand::{Rng, RngCore};

use super::params::{Linear, ParamBuilder, ParamStore};
use super::transformer::stats_pool;
use super::Pooling;
use crate::error::{DidError, Result};
use crate::features::FeatureMatrix;
use crate::kv::Pairs;

#[derive(Clone, Debug, PartialEq)]
pub struct CnnConfig {
    pub input_dim: usize,
    /// Output channels of each conv block.
    pub channels: Vec<usize>,
    pub kernels: Vec<usize>,
    pub strides: Vec<usize>,
    pub pooling: Pooling,
    /// Hidden sizes of the fully connected head before the classifier.
    pub fc_dims: Vec<usize>,
    pub num_classes: usize,
    pub dropout: f64,
}

impl Default for CnnConfig {
    fn default() -> Self {
        Self {
            input_dim: 80,
            channels: vec![256, 256, 256, 512],
            kernels: vec![5, 3, 3, 3],
            strides: vec![1, 1, 1, 1],
            pooling: Pooling::Mean,
            fc_dims: vec![64],
            num_classes: 17,
            dropout: 0.0,
        }
    }
}

impl CnnConfig {
    pub fn validate(&self) -> Result<()> {
        let n = self.channels.len();
        if n == 0 || self.kernels.len() != n || self.strides.len() != n {
            return Err(DidError::Config(format!(
                "cnn needs matching non-empty channels/kernels/strides, got {}/{}/{}",
                n,
                self.kernels.len(),
                self.strides.len()
            )));
        }
        let all = [&self.channels, &self.kernels, &self.strides, &self.fc_dims];
        if self.input_dim == 0 || all.iter().any(|v| v.contains(&0)) {
            return Err(DidError::Config("cnn extents must be positive".into()));
        }
        if self.num_classes < 2 {
            return Err(DidError::Config(format!(
                "need at least 2 classes, got {}",
                self.num_classes
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(DidError::Config(format!(
                "dropout {} outside [0, 1)",
                self.dropout
            )));
        }
        Ok(())
    }

    /// Input frames that influence one output frame of the last block.
    pub fn receptive_field(&self) -> usize {
        let mut field = 1;
        let mut jump = 1;
        for (&k, &s) in self.kernels.iter().zip(&self.strides) {
            field += (k - 1) * jump;
            jump *= s;
        }
        field
    }

    pub fn to_pairs(&self, out: &mut Pairs) {
        out.insert("input_dim", self.input_dim);
        out.insert_list("channels", &self.channels);
        out.insert_list("kernels", &self.kernels);
        out.insert_list("strides", &self.strides);
        out.insert("pooling", self.pooling);
        out.insert_list("fc_dims", &self.fc_dims);
        out.insert("num_classes", self.num_classes);
        out.insert("dropout", self.dropout);
    }

    pub fn from_pairs(p: &mut Pairs) -> Result<Self> {
        let d = Self::default();
        Ok(Self {
            input_dim: p.take("input_dim", d.input_dim)?,
            channels: p.take_list("channels", d.channels)?,
            kernels: p.take_list("kernels", d.kernels)?,
            strides: p.take_list("strides", d.strides)?,
            pooling: p.take("pooling", d.pooling)?,
            fc_dims: p.take_list("fc_dims", d.fc_dims)?,
            num_classes: p.take("num_classes", d.num_classes)?,
            dropout: p.take("dropout", d.dropout)?,
        })
    }
}

#[derive(Clone, Copy, Debug)]
struct ConvBlock {
    w: usize,
    b: usize,
    stride: usize,
}

#[derive(Clone, Debug)]
pub struct CnnModel {
    cfg: CnnConfig,
    params: ParamStore,
    blocks: Vec<ConvBlock>,
    head: Vec<Linear>,
}

impl CnnModel {
    pub fn new<R: Rng>(cfg: CnnConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let mut pb = ParamBuilder::new(rng);
        let mut c_in = cfg.input_dim;
        let mut blocks = Vec::new();
        for (i, ((&c_out, &k), &stride)) in cfg
            .channels
            .iter()
            .zip(&cfg.kernels)
            .zip(&cfg.strides)
            .enumerate()
        {
            let w = pb.weight(format!("conv{i}.weight"), &[k, c_in, c_out], k * c_in);
            let b = pb.filled(format!("conv{i}.bias"), &[c_out], 0.0);
            blocks.push(ConvBlock { w, b, stride });
            c_in = c_out;
        }
        let mut width = match cfg.pooling {
            Pooling::Mean => c_in,
            Pooling::MeanStd => 2 * c_in,
        };
        let mut head = Vec::new();
        for (i, &h) in cfg.fc_dims.iter().enumerate() {
            head.push(Linear::new(
                &mut pb,
                &format!("fc{}", i + 1),
                width,
                h,
                true,
            ));
            width = h;
        }
        head.push(Linear::new(
            &mut pb,
            "classifier",
            width,
            cfg.num_classes,
            true,
        ));
        Ok(Self {
            params: pb.store,
            cfg,
            blocks,
            head,
        })
    }

    pub fn config(&self) -> &CnnConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn receptive_field(&self) -> usize {
        self.cfg.receptive_field()
    }

    pub fn forward<'t>(
        &self,
        tape: &'t Tape,
        p: &[Var<'t>],
        feats: &FeatureMatrix,
        mut rng: Option<&mut dyn RngCore>,
    ) -> Result<Var<'t>> {
        if feats.dim() != self.cfg.input_dim {
            return Err(DidError::Config(format!(
                "cnn expects {}-dim input frames, got {}",
                self.cfg.input_dim,
                feats.dim()
            )));
        }
        let field = self.receptive_field();
        if feats.num_frames() < field {
            return Err(DidError::Input(format!(
                "{} frames are shorter than the {field}-frame receptive field",
                feats.num_frames()
            )));
        }
        let mut h = tape.constant(feats.to_tensor());
        for block in &self.blocks {
            h = h
                .conv1d(&p[block.w], block.stride, 0)?
                .add(&p[block.b])?
                .relu();
            if let Some(r) = rng.as_deref_mut() {
                if self.cfg.dropout > 0.0 {
                    h = h.dropout(self.cfg.dropout, true, r)?;
                }
            }
        }
        let pooled = stats_pool(&h, self.cfg.pooling)?;
        let width = pooled.shape()[0];
        let mut z = pooled.reshape(vec![1, width])?;
        let (last, hidden) = self.head.split_last().expect("classifier layer");
        for layer in hidden {
            z = layer.apply(p, &z)?.relu();
        }
        z = last.apply(p, &z)?;
        Ok(z.reshape(vec![self.cfg.num_classes])?)
    }
}
