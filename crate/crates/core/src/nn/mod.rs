//! Minimal differentiable network engine: parameter storage, forward and
//! backward passes for the fixed op set, momentum SGD with cosine
//! annealing, and seeded weight perturbation.

mod network;
mod optim;
mod params;

pub use network::{
    block_names, forward, gradients, init_params, min_relu_margin, required_names, ForwardOutput,
    Gradients, HEAD_B, HEAD_W, STEM_B, STEM_W,
};
pub use optim::{backward_step, cosine_lr, OptimizerConfig, SgdState};
pub use params::{gaussian_direction, perturb, Group, ParamEntry, ParamSet, PerturbMask};

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::seed::{derive_seed, rng_from_seed};

/// Row-major `[len x input_dim]` inputs with one class label per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    inputs: Vec<f64>,
    input_dim: usize,
    labels: Vec<usize>,
}

impl Batch {
    pub fn new(inputs: Vec<f64>, input_dim: usize, labels: Vec<usize>) -> Result<Self> {
        if labels.is_empty() || input_dim == 0 {
            return Err(Error::InvalidParameter("batch must hold at least one sample".into()));
        }
        if inputs.len() != labels.len() * input_dim {
            return Err(Error::ShapeMismatch(format!(
                "{} inputs for {} labels of dim {input_dim}",
                inputs.len(),
                labels.len()
            )));
        }
        if inputs.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("batch inputs must be finite".into()));
        }
        Ok(Self { inputs, input_dim, labels })
    }

    pub fn inputs(&self) -> &[f64] {
        &self.inputs
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Rows `indices`, in the given order.
    pub fn gather(&self, indices: &[usize]) -> Batch {
        let d = self.input_dim;
        let mut inputs = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            inputs.extend_from_slice(&self.inputs[i * d..(i + 1) * d]);
        }
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        Batch { inputs, input_dim: d, labels }
    }

    /// Seeded subset of at most `size` rows, kept in their original order.
    /// The whole batch is returned when `size` covers it.
    pub fn subset(&self, size: usize, seed: u64) -> Batch {
        if size >= self.len() {
            return self.clone();
        }
        let mut pick: Vec<usize> = (0..self.len()).collect();
        pick.shuffle(&mut rng_from_seed(derive_seed(seed, "eval-subset")));
        pick.truncate(size.max(1));
        pick.sort_unstable();
        self.gather(&pick)
    }
}
