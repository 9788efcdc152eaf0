use std::collections::HashMap;

use did_tensor::{Tape, Tensor, Var};
use rand::Rng;

use crate::error::{DidError, Result};

/// Named, ordered model parameters.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.position(name).map(|i| &self.tensors[i])
    }

    /// Total scalar count.
    pub fn num_values(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub(crate) fn push(&mut self, name: String, tensor: Tensor) -> usize {
        assert!(
            !self.index.contains_key(&name),
            "duplicate parameter {name}"
        );
        let id = self.tensors.len();
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.tensors.push(tensor.with_requires_grad(true));
        id
    }

    /// Binds every parameter as a leaf of `tape`, in store order.
    pub fn bind<'t>(&self, tape: &'t Tape) -> Vec<Var<'t>> {
        tape.bind(&self.tensors)
    }

    /// Replaces every parameter with the tensor of the same name from
    /// `loaded`, which must cover exactly this store's names and shapes.
    pub fn load(&mut self, loaded: Vec<(String, Tensor)>) -> Result<()> {
        if loaded.len() != self.len() {
            return Err(DidError::Format(format!(
                "checkpoint holds {} tensors, model expects {}",
                loaded.len(),
                self.len()
            )));
        }
        for (name, tensor) in loaded {
            let id = self.position(&name).ok_or_else(|| {
                DidError::Format(format!("unexpected parameter {name:?} in checkpoint"))
            })?;
            if tensor.shape() != self.tensors[id].shape() {
                return Err(DidError::Dimension(format!(
                    "parameter {name}: checkpoint shape {:?}, model shape {:?}",
                    tensor.shape(),
                    self.tensors[id].shape()
                )));
            }
            self.tensors[id] = tensor.with_requires_grad(true);
        }
        Ok(())
    }
}

/// Registers parameters with deterministic initial values.
pub(crate) struct ParamBuilder<'r, R: Rng> {
    pub store: ParamStore,
    rng: &'r mut R,
}

impl<'r, R: Rng> ParamBuilder<'r, R> {
    pub fn new(rng: &'r mut R) -> Self {
        Self {
            store: ParamStore::default(),
            rng,
        }
    }

    /// Uniform in `±sqrt(3 / fan_in)`, giving variance `1 / fan_in`.
    pub fn weight(&mut self, name: String, shape: &[usize], fan_in: usize) -> usize {
        let bound = (3.0 / fan_in as f64).sqrt();
        let numel = shape.iter().product();
        let data = (0..numel)
            .map(|_| self.rng.random_range(-bound..bound))
            .collect();
        self.store.push(
            name,
            Tensor::new(shape.to_vec(), data).expect("positive extents"),
        )
    }

    pub fn filled(&mut self, name: String, shape: &[usize], value: f64) -> usize {
        self.store.push(name, Tensor::filled(shape, value))
    }
}

/// Affine map `x W + b` over the last axis of a `[rows, in]` input.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Linear {
    pub w: usize,
    pub b: Option<usize>,
}

impl Linear {
    pub fn new<R: Rng>(
        pb: &mut ParamBuilder<'_, R>,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        bias: bool,
    ) -> Self {
        let w = pb.weight(format!("{name}.weight"), &[fan_in, fan_out], fan_in);
        let b = bias.then(|| pb.filled(format!("{name}.bias"), &[fan_out], 0.0));
        Self { w, b }
    }

    pub fn apply<'t>(&self, p: &[Var<'t>], x: &Var<'t>) -> Result<Var<'t>> {
        let y = x.matmul(&p[self.w])?;
        Ok(match self.b {
            Some(b) => y.add(&p[b])?,
            None => y,
        })
    }
}
