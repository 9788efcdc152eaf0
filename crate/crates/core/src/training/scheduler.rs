use crate::error::{DidError, Result};

/// Reduces the learning rate when dev accuracy stops improving.
#[derive(Clone, Debug, PartialEq)]
pub struct SchedulerState {
    pub best_dev_accuracy: Option<f64>,
    pub epochs_since_improvement: usize,
    pub reduction_factor: f64,
    pub patience: usize,
    pub min_lr: f64,
    /// Absolute accuracy gain (as a fraction) that counts as improvement.
    pub threshold: f64,
}

impl Default for SchedulerState {
    fn default() -> Self {
        Self {
            best_dev_accuracy: None,
            epochs_since_improvement: 0,
            reduction_factor: 0.5,
            patience: 1,
            min_lr: 1e-5,
            threshold: 0.001,
        }
    }
}

impl SchedulerState {
    pub fn validate(&self) -> Result<()> {
        if !(self.reduction_factor > 0.0 && self.reduction_factor < 1.0) {
            return Err(DidError::Config(format!(
                "reduction factor {} outside (0, 1)",
                self.reduction_factor
            )));
        }
        if self.patience == 0 || self.min_lr <= 0.0 || self.threshold < 0.0 {
            return Err(DidError::Config(
                "patience must be at least 1, min_lr positive and threshold non-negative".into(),
            ));
        }
        Ok(())
    }

    /// Records one epoch's dev accuracy (a fraction) and returns the learning
    /// rate for the next epoch.
    pub fn step(&mut self, dev_accuracy: f64, lr: f64) -> f64 {
        let improved = self
            .best_dev_accuracy
            .is_none_or(|best| dev_accuracy > best + self.threshold);
        if improved {
            self.best_dev_accuracy = Some(dev_accuracy);
            self.epochs_since_improvement = 0;
            return lr;
        }
        self.epochs_since_improvement += 1;
        if self.epochs_since_improvement >= self.patience {
            self.epochs_since_improvement = 0;
            return (lr * self.reduction_factor).max(self.min_lr).min(lr);
        }
        lr
    }
}
