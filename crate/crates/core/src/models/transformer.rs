use did_tensor::{concat, Tape, Var};
use rand::{Rng, RngCore};

use super::params::{Linear, ParamBuilder, ParamStore};
use super::positional::positional_encoding;
use super::Pooling;
use crate::error::{DidError, Result};
use crate::features::FeatureMatrix;
use crate::kv::Pairs;

const LN_EPS: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq)]
pub struct TransformerConfig {
    pub num_layers: usize,
    pub num_heads: usize,
    pub d_model: usize,
    pub d_inner: usize,
    /// Dimension of the stacked input frames.
    pub input_dim: usize,
    pub fc_dims: [usize; 2],
    pub num_classes: usize,
    pub max_len: usize,
    pub pooling: Pooling,
    pub dropout: f64,
}

impl Default for TransformerConfig {
    fn default() -> Self {
        Self {
            num_layers: 4,
            num_heads: 8,
            d_model: 512,
            d_inner: 2048,
            input_dim: 320,
            fc_dims: [512, 64],
            num_classes: 17,
            max_len: 10_000,
            pooling: Pooling::MeanStd,
            dropout: 0.0,
        }
    }
}

impl TransformerConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(DidError::Config(msg));
        if self.num_layers == 0 || self.num_heads == 0 {
            return fail("num_layers and num_heads must be positive".into());
        }
        if self.d_model == 0 || !self.d_model.is_multiple_of(self.num_heads) {
            return fail(format!(
                "d_model {} is not divisible by {} heads",
                self.d_model, self.num_heads
            ));
        }
        if !self.d_model.is_multiple_of(2) {
            return fail(format!("d_model {} must be even", self.d_model));
        }
        if self.num_classes < 2 {
            return fail(format!("need at least 2 classes, got {}", self.num_classes));
        }
        if self.d_inner == 0 || self.input_dim == 0 || self.max_len == 0 {
            return fail("d_inner, input_dim and max_len must be positive".into());
        }
        if self.fc_dims.contains(&0) {
            return fail("fc_dims must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout {} outside [0, 1)", self.dropout));
        }
        Ok(())
    }

    pub fn d_k(&self) -> usize {
        self.d_model / self.num_heads
    }

    pub fn to_pairs(&self, out: &mut Pairs) {
        out.insert("num_layers", self.num_layers);
        out.insert("num_heads", self.num_heads);
        out.insert("d_model", self.d_model);
        out.insert("d_inner", self.d_inner);
        out.insert("input_dim", self.input_dim);
        out.insert_list("fc_dims", &self.fc_dims);
        out.insert("num_classes", self.num_classes);
        out.insert("max_len", self.max_len);
        out.insert("pooling", self.pooling);
        out.insert("dropout", self.dropout);
    }

    /// Reads the keys written by [`Self::to_pairs`]; absent keys keep their
    /// defaults.
    pub fn from_pairs(p: &mut Pairs) -> Result<Self> {
        let d = Self::default();
        let fc: Vec<usize> = p.take_list("fc_dims", d.fc_dims.to_vec())?;
        let fc_dims: [usize; 2] = fc.try_into().map_err(|v: Vec<usize>| {
            DidError::Config(format!("fc_dims needs exactly 2 entries, got {}", v.len()))
        })?;
        let cfg = Self {
            num_layers: p.take("num_layers", d.num_layers)?,
            num_heads: p.take("num_heads", d.num_heads)?,
            d_model: p.take("d_model", d.d_model)?,
            d_inner: p.take("d_inner", d.d_inner)?,
            input_dim: p.take("input_dim", d.input_dim)?,
            fc_dims,
            num_classes: p.take("num_classes", d.num_classes)?,
            max_len: p.take("max_len", d.max_len)?,
            pooling: p.take("pooling", d.pooling)?,
            dropout: p.take("dropout", d.dropout)?,
        };
        Ok(cfg)
    }
}

/// Projection weights of one attention head, each `d_model x d_k`.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Head {
    pub w_q: usize,
    pub w_k: usize,
    pub w_v: usize,
}

#[derive(Clone, Debug)]
pub(crate) struct EncoderLayer {
    pub heads: Vec<Head>,
    pub w_o: usize,
    pub ffn_in: Linear,
    pub ffn_out: Linear,
    pub ln1: (usize, usize),
    pub ln2: (usize, usize),
}

/// Bound attention weights of one layer.
pub struct MhaVars<'a, 't> {
    /// `(W_Q, W_K, W_V)` per head.
    pub heads: Vec<(&'a Var<'t>, &'a Var<'t>, &'a Var<'t>)>,
    pub w_o: &'a Var<'t>,
}

/// Multi-head scaled dot-product self-attention over a `[T, d_model]` input.
///
/// Returns the projected output and the `[T, T]` attention weights of each
/// head.
pub fn mha<'t>(x: &Var<'t>, p: &MhaVars<'_, 't>) -> Result<(Var<'t>, Vec<Var<'t>>)> {
    let mut outs = Vec::with_capacity(p.heads.len());
    let mut weights = Vec::with_capacity(p.heads.len());
    for (w_q, w_k, w_v) in &p.heads {
        let d_k = w_q.shape()[1];
        let q = x.matmul(w_q)?;
        let k = x.matmul(w_k)?;
        let v = x.matmul(w_v)?;
        let scores = q.matmul(&k.transpose()?)?.scale(1.0 / (d_k as f64).sqrt());
        let attn = scores.softmax(1)?;
        outs.push(attn.matmul(&v)?);
        weights.push(attn);
    }
    let joined = if outs.len() == 1 {
        outs.pop().expect("one head")
    } else {
        concat(&outs, 1)?
    };
    Ok((joined.matmul(p.w_o)?, weights))
}

/// Mean (and optionally standard deviation) over time of a `[T, d]` input.
pub fn stats_pool<'t>(h: &Var<'t>, pooling: Pooling) -> Result<Var<'t>> {
    let mean = h.mean(0)?;
    Ok(match pooling {
        Pooling::Mean => mean,
        Pooling::MeanStd => concat(&[mean, h.std(0)?], 0)?,
    })
}

#[derive(Clone, Debug)]
pub struct TransformerModel {
    cfg: TransformerConfig,
    params: ParamStore,
    input: Linear,
    layers: Vec<EncoderLayer>,
    fc: [Linear; 3],
}

impl TransformerModel {
    pub fn new<R: Rng>(cfg: TransformerConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let mut pb = ParamBuilder::new(rng);
        let (d, d_k) = (cfg.d_model, cfg.d_k());
        let input = Linear::new(&mut pb, "input", cfg.input_dim, d, true);
        let layers = (0..cfg.num_layers)
            .map(|l| {
                let heads = (0..cfg.num_heads)
                    .map(|h| {
                        let mut w =
                            |m: &str| pb.weight(format!("layer{l}.head{h}.{m}"), &[d, d_k], d);
                        Head {
                            w_q: w("w_q"),
                            w_k: w("w_k"),
                            w_v: w("w_v"),
                        }
                    })
                    .collect();
                let w_o = pb.weight(format!("layer{l}.w_o"), &[d, d], d);
                let ffn_in =
                    Linear::new(&mut pb, &format!("layer{l}.ffn_in"), d, cfg.d_inner, true);
                let ffn_out =
                    Linear::new(&mut pb, &format!("layer{l}.ffn_out"), cfg.d_inner, d, true);
                let mut ln = |k: usize| {
                    (
                        pb.filled(format!("layer{l}.ln{k}.gain"), &[d], 1.0),
                        pb.filled(format!("layer{l}.ln{k}.bias"), &[d], 0.0),
                    )
                };
                let (ln1, ln2) = (ln(1), ln(2));
                EncoderLayer {
                    heads,
                    w_o,
                    ffn_in,
                    ffn_out,
                    ln1,
                    ln2,
                }
            })
            .collect();
        let pooled = match cfg.pooling {
            Pooling::Mean => d,
            Pooling::MeanStd => 2 * d,
        };
        let [f1, f2] = cfg.fc_dims;
        let fc = [
            Linear::new(&mut pb, "fc1", pooled, f1, true),
            Linear::new(&mut pb, "fc2", f1, f2, true),
            Linear::new(&mut pb, "classifier", f2, cfg.num_classes, true),
        ];
        Ok(Self {
            params: pb.store,
            cfg,
            input,
            layers,
            fc,
        })
    }

    pub fn config(&self) -> &TransformerConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Attention weights of `layer`, borrowed from bound parameters.
    pub fn mha_vars<'a, 't>(&self, p: &'a [Var<'t>], layer: usize) -> MhaVars<'a, 't> {
        let l = &self.layers[layer];
        MhaVars {
            heads: l
                .heads
                .iter()
                .map(|h| (&p[h.w_q], &p[h.w_k], &p[h.w_v]))
                .collect(),
            w_o: &p[l.w_o],
        }
    }

    /// `LN(x + MHA(x))` followed by `LN(y + FFN(y))`.
    pub fn encoder_layer<'t>(
        &self,
        p: &[Var<'t>],
        layer: usize,
        x: &Var<'t>,
        rng: &mut Option<&mut dyn RngCore>,
    ) -> Result<Var<'t>> {
        let l = &self.layers[layer];
        let (a, _) = mha(x, &self.mha_vars(p, layer))?;
        let a = self.dropout(&a, rng)?;
        let y = x.add(&a)?.layer_norm(&p[l.ln1.0], &p[l.ln1.1], LN_EPS)?;
        let f = l.ffn_in.apply(p, &y)?.relu();
        let f = l.ffn_out.apply(p, &f)?;
        let f = self.dropout(&f, rng)?;
        Ok(y.add(&f)?.layer_norm(&p[l.ln2.0], &p[l.ln2.1], LN_EPS)?)
    }

    fn dropout<'t>(&self, x: &Var<'t>, rng: &mut Option<&mut dyn RngCore>) -> Result<Var<'t>> {
        match rng {
            Some(r) if self.cfg.dropout > 0.0 => Ok(x.dropout(self.cfg.dropout, true, *r)?),
            _ => Ok(x.clone()),
        }
    }

    /// Logits for one utterance of stacked features. Passing an rng enables
    /// training-mode dropout.
    pub fn forward<'t>(
        &self,
        tape: &'t Tape,
        p: &[Var<'t>],
        feats: &FeatureMatrix,
        mut rng: Option<&mut dyn RngCore>,
    ) -> Result<Var<'t>> {
        if feats.dim() != self.cfg.input_dim {
            return Err(DidError::Config(format!(
                "transformer expects {}-dim input frames, got {}",
                self.cfg.input_dim,
                feats.dim()
            )));
        }
        let t = feats.num_frames();
        if t > self.cfg.max_len {
            return Err(DidError::Input(format!(
                "{t} frames exceed max_len {}",
                self.cfg.max_len
            )));
        }
        let x = tape.constant(feats.to_tensor());
        let pe = tape.constant(positional_encoding(t, self.cfg.d_model)?);
        let mut h = self.input.apply(p, &x)?.add(&pe)?;
        for layer in 0..self.layers.len() {
            h = self.encoder_layer(p, layer, &h, &mut rng)?;
        }
        let pooled = stats_pool(&h, self.cfg.pooling)?;
        let width = pooled.shape()[0];
        let mut z = pooled.reshape(vec![1, width])?;
        z = self.fc[0].apply(p, &z)?.relu();
        z = self.fc[1].apply(p, &z)?.relu();
        z = self.fc[2].apply(p, &z)?;
        Ok(z.reshape(vec![self.cfg.num_classes])?)
    }
}
