use super::params::ParamSet;
use crate::error::{shape_err, Error, Result};

/// Velocity buffers for SGD with heavy-ball momentum.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub lr: f64,
    pub momentum: f64,
    velocities: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn new(params: &ParamSet, lr: f64, momentum: f64) -> Result<Self> {
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::InvalidArgument(format!("learning rate must be positive, got {lr}")));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::InvalidArgument(format!("momentum must be in [0, 1), got {momentum}")));
        }
        Ok(Self {
            lr,
            momentum,
            velocities: params.tensors().iter().map(|t| vec![0.0; t.numel()]).collect(),
        })
    }

    pub fn velocities(&self) -> &[Vec<f64>] {
        &self.velocities
    }

    pub fn velocities_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.velocities
    }

    /// `v ← μ·v + g; p ← p − lr·v` for every tensor, with `grads` aligned to `params`.
    pub fn step(&mut self, params: &mut ParamSet, grads: &[Vec<f64>]) -> Result<()> {
        if grads.len() != self.velocities.len() || params.len() != self.velocities.len() {
            return Err(shape_err(
                "sgd_momentum_step",
                format!("{} params, {} grads, {} velocities", params.len(), grads.len(), self.velocities.len()),
            ));
        }
        for ((t, g), v) in params.tensors_mut().iter_mut().zip(grads).zip(&mut self.velocities) {
            if g.len() != v.len() || t.numel() != v.len() {
                return Err(shape_err("sgd_momentum_step", format!("gradient {} vs parameter {}", g.len(), t.numel())));
            }
            for ((p, &gi), vi) in t.data_mut().iter_mut().zip(g).zip(v.iter_mut()) {
                *vi = self.momentum * *vi + gi;
                *p -= self.lr * *vi;
            }
        }
        Ok(())
    }
}
