use serde::{Deserialize, Serialize};

use super::network::gradients;
use super::params::ParamSet;
use super::Batch;
use crate::error::{Error, Result};
use crate::searchspace::{Genotype, SearchSpaceSpec};

/// SGD hyperparameters. `epochs = 0` is allowed and means "no training".
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub lr_max: f64,
    pub lr_min: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub momentum: f64,
    pub batch_size: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            lr_max: 0.025,
            lr_min: 0.001,
            weight_decay: 5e-4,
            epochs: 60,
            momentum: 0.9,
            batch_size: 64,
        }
    }
}

impl OptimizerConfig {
    /// Desk-scale schedule for from-scratch training.
    pub fn scratch() -> Self {
        Self { epochs: 40, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(format!("optimizer: {m}")));
        if !(self.lr_max > 0.0 && self.lr_max.is_finite()) {
            return bad("lr_max must be > 0");
        }
        if !(self.lr_min >= 0.0 && self.lr_min <= self.lr_max) {
            return bad("need 0 <= lr_min <= lr_max");
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad("weight_decay must be >= 0");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must be in [0, 1)");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        Ok(())
    }
}

/// Cosine annealing from `lr_max` at epoch 0 to `lr_min` at `total_epochs`.
pub fn cosine_lr(epoch: usize, total_epochs: usize, cfg: &OptimizerConfig) -> f64 {
    debug_assert!(epoch <= total_epochs);
    if epoch == 0 {
        return cfg.lr_max;
    }
    if epoch >= total_epochs {
        return cfg.lr_min;
    }
    let phase = std::f64::consts::PI * epoch as f64 / total_epochs as f64;
    cfg.lr_min + 0.5 * (cfg.lr_max - cfg.lr_min) * (1.0 + phase.cos())
}

/// Momentum buffers, one per parameter entry, created on first touch.
#[derive(Debug, Clone, Default)]
pub struct SgdState {
    velocity: Vec<Option<Vec<f64>>>,
    steps: usize,
}

impl SgdState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn steps(&self) -> usize {
        self.steps
    }
}

/// One momentum-SGD step on the genotype's active path. Only parameters
/// reachable from the genotype are read or written. Returns the batch loss
/// before the update.
pub fn backward_step(
    params: &mut ParamSet,
    genotype: &Genotype,
    space: &SearchSpaceSpec,
    batch: &Batch,
    lr: f64,
    cfg: &OptimizerConfig,
    state: &mut SgdState,
) -> Result<f64> {
    if !(lr > 0.0 && lr.is_finite()) {
        return Err(Error::InvalidParameter(format!("learning rate {lr} must be > 0")));
    }
    let step = state.steps;
    let grads = gradients(params, genotype, space, batch)?;
    for (i, g) in &grads.grads {
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteGradient { step, param: params.entries()[*i].name.clone() });
        }
    }
    if state.velocity.len() < params.len() {
        state.velocity.resize(params.len(), None);
    }
    for (i, g) in grads.grads {
        let w = params.values_mut(i);
        let v = state.velocity[i].get_or_insert_with(|| vec![0.0; w.len()]);
        for ((wj, vj), gj) in w.iter_mut().zip(v.iter_mut()).zip(&g) {
            let d = gj + cfg.weight_decay * *wj;
            *vj = cfg.momentum * *vj + d;
            *wj -= lr * *vj;
        }
    }
    state.steps += 1;
    Ok(grads.loss)
}
