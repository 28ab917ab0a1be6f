//! Weight-sharing supernet trained by uniform single-path sampling.

use rand::Rng;

use crate::data::{Dataset, Split};
use crate::error::{Error, Result};
use crate::nn::{backward_step, block_names, cosine_lr, init_params, required_names, OptimizerConfig, ParamSet, SgdState};
use crate::searchspace::{Genotype, SearchSpaceSpec};

/// Draws one op per edge, independently and uniformly.
pub fn sample_uniform_path(space: &SearchSpaceSpec, rng: &mut impl Rng) -> Genotype {
    space.random_genotype(rng)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuperNet {
    space: SearchSpaceSpec,
    shared: ParamSet,
    initial: ParamSet,
    epoch: usize,
}

/// What happened during one call to [`SuperNet::train`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainReport {
    /// Mean sampled-path batch loss per epoch.
    pub epoch_losses: Vec<f64>,
    /// Path sampled for every mini-batch, in step order.
    pub sampled: Vec<Genotype>,
}

impl SuperNet {
    /// Fresh supernet holding one weight block per (cell, edge, parametric op).
    pub fn new(space: SearchSpaceSpec, input_dim: usize, classes: usize, rng: &mut impl Rng) -> Result<Self> {
        let shared = init_params(&space, None, input_dim, classes, rng)?;
        Ok(Self { initial: shared.clone(), shared, space, epoch: 0 })
    }

    pub fn from_parts(space: SearchSpaceSpec, shared: ParamSet, initial: ParamSet, epoch: usize) -> Result<Self> {
        if !shared.same_structure(&initial) {
            return Err(Error::ShapeMismatch("current and initial snapshots differ in structure".into()));
        }
        for cell in 0..space.cells_per_network() {
            for edge in 0..space.edge_count() {
                for &op in space.ops() {
                    if let Some(missing) = block_names(cell, edge, op).into_iter().find(|n| !shared.contains(n)) {
                        return Err(Error::ShapeMismatch(format!("supernet lacks block {missing:?}")));
                    }
                }
            }
        }
        let net = Self { space, shared, initial, epoch };
        net.extract_subnet(&net.space.genotype(vec![0; net.space.edge_count()])?)?;
        Ok(net)
    }

    pub fn space(&self) -> &SearchSpaceSpec {
        &self.space
    }

    pub fn shared_params(&self) -> &ParamSet {
        &self.shared
    }

    pub fn initial_snapshot(&self) -> &ParamSet {
        &self.initial
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    /// Single-path training: one uniformly sampled genotype per mini-batch,
    /// learning rate annealed per epoch.
    pub fn train(&mut self, data: &Dataset, cfg: &OptimizerConfig, rng: &mut impl Rng) -> Result<TrainReport> {
        cfg.validate()?;
        if data.split_indices(Split::Train).is_empty() {
            return Err(Error::InvalidParameter("training split is empty".into()));
        }
        let shuffle_seed: u64 = rng.random();
        let mut state = SgdState::new();
        let mut report = TrainReport::default();
        for epoch in 0..cfg.epochs {
            let lr = cosine_lr(epoch, cfg.epochs, cfg);
            let (mut sum, mut count) = (0.0, 0usize);
            for batch in data.batches(Split::Train, cfg.batch_size, shuffle_seed, epoch)? {
                let path = sample_uniform_path(&self.space, rng);
                sum += backward_step(&mut self.shared, &path, &self.space, &batch, lr, cfg, &mut state)?;
                count += 1;
                report.sampled.push(path);
            }
            report.epoch_losses.push(sum / count as f64);
            self.epoch += 1;
        }
        Ok(report)
    }

    /// Copies stem, head and exactly the blocks `g` selects from the trained weights.
    pub fn extract_subnet(&self, g: &Genotype) -> Result<ParamSet> {
        self.space.validate(g)?;
        self.shared.select(required_names(&self.space, g).iter().map(String::as_str))
    }

    /// Same as [`extract_subnet`](Self::extract_subnet) but from the snapshot
    /// taken at construction.
    pub fn extract_initial_subnet(&self, g: &Genotype) -> Result<ParamSet> {
        self.space.validate(g)?;
        self.initial.select(required_names(&self.space, g).iter().map(String::as_str))
    }
}
