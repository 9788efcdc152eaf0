use crate::error::{DidError, Result};
use crate::models::ParamStore;

/// SGD with classical momentum: `v <- mu * v - lr * g`, `theta <- theta + v`.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub learning_rate: f64,
    pub momentum: f64,
    velocity: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn new(params: &ParamStore, learning_rate: f64, momentum: f64) -> Result<Self> {
        if !(learning_rate > 0.0 && learning_rate.is_finite()) {
            return Err(DidError::Config(format!(
                "learning rate must be positive, got {learning_rate}"
            )));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(DidError::Config(format!(
                "momentum {momentum} outside [0, 1)"
            )));
        }
        Ok(Self {
            learning_rate,
            momentum,
            velocity: params
                .tensors()
                .iter()
                .map(|t| vec![0.0; t.numel()])
                .collect(),
        })
    }

    pub fn velocity(&self) -> &[Vec<f64>] {
        &self.velocity
    }
}

/// Applies one update from the gradient buffers held by `params`, then clears
/// them. Every parameter must carry a gradient.
pub fn sgd_step(params: &mut ParamStore, state: &mut OptimizerState) -> Result<()> {
    if state.velocity.len() != params.len() {
        return Err(DidError::Contract(format!(
            "optimizer tracks {} parameters, model has {}",
            state.velocity.len(),
            params.len()
        )));
    }
    let names = params.names().to_vec();
    if let Some(i) = params.tensors().iter().position(|t| t.grad().is_none()) {
        return Err(DidError::Contract(format!(
            "parameter {} has no gradient",
            names[i]
        )));
    }
    let (lr, mu) = (state.learning_rate, state.momentum);
    for (tensor, v) in params.tensors_mut().iter_mut().zip(&mut state.velocity) {
        let g = tensor.take_grad().expect("checked above");
        for (vi, gi) in v.iter_mut().zip(&g) {
            *vi = mu * *vi - lr * gi;
        }
        for (theta, vi) in tensor.data_mut().iter_mut().zip(v.iter()) {
            *theta += vi;
        }
    }
    Ok(())
}
