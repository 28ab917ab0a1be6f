//! Architecture scores: validation loss/accuracy, angle between initial
//! and trained weights, loss-surface flatness with a depth term, and the
//! linear combination of a base score with flatness.
//!
//! Flatness of a weight vector `θ` over an ascending perturbation grid
//! `σ_1 < ... < σ_t` with a Gaussian direction `g`:
//!
//! ```text
//! D = Σ_{i<t} |L(θ+σ_{i+1}g) − L(θ+σ_i g)| / (σ_{i+1} − σ_i)  +  α |L(θ+σ_1 g) / σ_1|
//! F = 1 / max(mean over replicates of D, ε)
//! ```
//!
//! Higher `F` means a flatter and deeper minimum.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{forward, gaussian_direction, perturb, Batch, ParamSet, PerturbMask};
use crate::searchspace::{Genotype, SearchSpaceSpec};
use crate::seed::{rng_from_seed, short_digest};
use crate::supernet::SuperNet;

pub const DEFAULT_EPSILON: f64 = 1e-12;

/// How noise is drawn across the σ grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NoiseMode {
    /// One direction per replicate, rescaled by every σ.
    #[default]
    Ray,
    /// A fresh direction for every σ.
    Independent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlatnessConfig {
    pub sigmas: Vec<f64>,
    pub alpha: f64,
    pub replicates: usize,
    pub mode: NoiseMode,
    pub mask: PerturbMask,
    pub eval_subset_size: usize,
    pub subset_seed: u64,
    pub signed_variant: bool,
    pub epsilon: f64,
}

impl Default for FlatnessConfig {
    fn default() -> Self {
        Self {
            sigmas: vec![2e-3, 1e-2, 2e-2],
            alpha: 1.0,
            replicates: 8,
            mode: NoiseMode::Ray,
            mask: PerturbMask::All,
            eval_subset_size: 512,
            subset_seed: 0,
            signed_variant: false,
            epsilon: DEFAULT_EPSILON,
        }
    }
}

/// Named σ grids: the four perturbation ranges of the NAS-Bench-201 ablation
/// plus the two DARTS-space grids.
pub const SIGMA_GRIDS: [(&str, [f64; 3]); 6] = [
    ("nb201-tiny", [1e-6, 5e-6, 1e-5]),
    ("nb201-small", [5e-4, 1e-3, 2e-3]),
    ("nb201-default", [2e-3, 1e-2, 2e-2]),
    ("nb201-wide", [2e-3, 2e-2, 4e-2]),
    ("darts-c10", [1e-5, 5e-5, 1e-4]),
    ("darts-c100", [1e-3, 3e-3, 6e-3]),
];

impl FlatnessConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(format!("flatness: {m}")));
        if self.sigmas.len() < 2 {
            return bad("need at least two sigmas".into());
        }
        if self.sigmas.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return bad("sigmas must be finite and > 0".into());
        }
        if self.sigmas.windows(2).any(|w| w[1] <= w[0]) {
            return bad("sigmas must be strictly increasing".into());
        }
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return bad(format!("alpha {} must be finite and >= 0", self.alpha));
        }
        if self.replicates == 0 || self.eval_subset_size == 0 {
            return bad("replicates and eval_subset_size must be >= 1".into());
        }
        if !(self.epsilon > 0.0 && self.epsilon <= 1e-6) {
            return bad(format!("epsilon {} not in (0, 1e-6]", self.epsilon));
        }
        Ok(())
    }

    /// Sentinel returned when the denominator collapses onto `epsilon`.
    pub fn flat_max(&self) -> f64 {
        1.0 / self.epsilon
    }

    pub fn sigma1(&self) -> f64 {
        self.sigmas[0]
    }
}

/// Anything that maps a weight vector to a scalar loss.
pub trait LossSurface {
    fn loss(&self, params: &ParamSet) -> Result<f64>;
}

/// Mean cross-entropy of one genotype on a fixed batch.
pub struct NetworkLoss<'a> {
    pub space: &'a SearchSpaceSpec,
    pub genotype: &'a Genotype,
    pub batch: &'a Batch,
}

impl LossSurface for NetworkLoss<'_> {
    fn loss(&self, params: &ParamSet) -> Result<f64> {
        Ok(forward(params, self.genotype, self.space, self.batch)?.loss)
    }
}

impl<F: Fn(&ParamSet) -> Result<f64>> LossSurface for F {
    fn loss(&self, params: &ParamSet) -> Result<f64> {
        self(params)
    }
}

/// Supplier of perturbation directions.
pub trait DirectionSource {
    fn draw(&mut self, like: &ParamSet) -> ParamSet;
}

/// Standard-normal directions from a seeded generator.
pub struct GaussianDirections<'r, R>(pub &'r mut R);

impl<R: rand::Rng> DirectionSource for GaussianDirections<'_, R> {
    fn draw(&mut self, like: &ParamSet) -> ParamSet {
        gaussian_direction(like, self.0)
    }
}

/// Always returns the same direction.
pub struct FixedDirection(pub ParamSet);

impl DirectionSource for FixedDirection {
    fn draw(&mut self, _like: &ParamSet) -> ParamSet {
        self.0.clone()
    }
}

/// Flatness from already-evaluated losses: `losses[r][i] = L(θ + σ_i g_r)`.
pub fn flatness_from_losses(losses: &[Vec<f64>], cfg: &FlatnessConfig) -> f64 {
    let s = &cfg.sigmas;
    let fold = |v: f64| if cfg.signed_variant { v } else { v.abs() };
    let total: f64 = losses
        .iter()
        .map(|l| {
            let slopes: f64 = (0..s.len() - 1)
                .map(|i| fold((l[i + 1] - l[i]) / (s[i + 1] - s[i])))
                .sum();
            slopes + cfg.alpha * fold(l[0] / s[0])
        })
        .sum();
    let mean = total / losses.len() as f64;
    if mean.is_nan() || mean <= cfg.epsilon {
        cfg.flat_max()
    } else {
        1.0 / mean
    }
}

/// Samples the loss along the configured perturbations of `params` and
/// returns `losses[replicate][sigma]`. `params` is never modified.
pub fn perturbed_losses<S, D>(
    surface: &S,
    params: &ParamSet,
    sigmas: &[f64],
    replicates: usize,
    mode: NoiseMode,
    mask: PerturbMask,
    directions: &mut D,
) -> Result<Vec<Vec<f64>>>
where
    S: LossSurface + ?Sized,
    D: DirectionSource + ?Sized,
{
    let mut out = Vec::with_capacity(replicates);
    for _ in 0..replicates {
        let mut row = Vec::with_capacity(sigmas.len());
        match mode {
            NoiseMode::Ray => {
                let g = directions.draw(params);
                for &sigma in sigmas {
                    row.push(surface.loss(&perturb(params, sigma, &g, mask)?)?);
                }
            }
            NoiseMode::Independent => {
                for &sigma in sigmas {
                    let g = directions.draw(params);
                    row.push(surface.loss(&perturb(params, sigma, &g, mask)?)?);
                }
            }
        }
        out.push(row);
    }
    Ok(out)
}

/// Flatness of an arbitrary loss surface.
pub fn flatness_score_with<S, D>(surface: &S, params: &ParamSet, cfg: &FlatnessConfig, directions: &mut D) -> Result<f64>
where
    S: LossSurface + ?Sized,
    D: DirectionSource + ?Sized,
{
    cfg.validate()?;
    let losses = perturbed_losses(surface, params, &cfg.sigmas, cfg.replicates, cfg.mode, cfg.mask, directions)?;
    Ok(flatness_from_losses(&losses, cfg))
}

/// Flatness of one subnet on a fixed seeded subset of `val_set`.
pub fn flatness_score(
    params: &ParamSet,
    genotype: &Genotype,
    space: &SearchSpaceSpec,
    val_set: &Batch,
    cfg: &FlatnessConfig,
    rng: &mut impl rand::Rng,
) -> Result<f64> {
    let batch = val_set.subset(cfg.eval_subset_size, cfg.subset_seed);
    let surface = NetworkLoss { space, genotype, batch: &batch };
    flatness_score_with(&surface, params, cfg, &mut GaussianDirections(rng))
}

/// Mean cross-entropy and argmax accuracy (ties go to the lowest class).
pub fn eval_loss_acc(
    params: &ParamSet,
    genotype: &Genotype,
    space: &SearchSpaceSpec,
    eval_set: &Batch,
) -> Result<(f64, f64)> {
    let out = forward(params, genotype, space, eval_set)?;
    let k = out.classes;
    let correct = eval_set
        .labels()
        .iter()
        .enumerate()
        .filter(|&(r, &label)| {
            let row = &out.logits[r * k..(r + 1) * k];
            let mut best = 0;
            for j in 1..k {
                if row[j] > row[best] {
                    best = j;
                }
            }
            best == label
        })
        .count();
    Ok((out.loss, correct as f64 / eval_set.len() as f64))
}

/// Angle in radians between the flattened initial and final weights.
pub fn angle_score(initial: &ParamSet, trained: &ParamSet) -> Result<f64> {
    if !initial.same_structure(trained) {
        return Err(Error::ShapeMismatch("angle needs identically structured parameter sets".into()));
    }
    let (mut dot, mut n0, mut nf) = (0.0, 0.0, 0.0);
    for (a, b) in initial.entries().iter().zip(trained.entries()) {
        for (x, y) in a.values.iter().zip(&b.values) {
            dot += x * y;
            n0 += x * x;
            nf += y * y;
        }
    }
    if n0.sqrt() < 1e-30 || nf.sqrt() < 1e-30 {
        return Err(Error::ZeroVector);
    }
    // sqrt(x * x) rounds back to x, so a vector against itself gives exactly 0
    Ok((dot / (n0 * nf).sqrt()).clamp(-1.0, 1.0).acos())
}

/// `base + gamma * flatness / sigma1`
pub fn combined_score(base: f64, flatness: f64, gamma: f64, sigma1: f64) -> f64 {
    base + gamma * (1.0 / sigma1) * flatness
}

/// Score used as the base term of a combined metric.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaseMetric {
    /// Validation accuracy.
    Accuracy,
    /// Negative validation loss.
    NegLoss,
    Angle,
}

impl BaseMetric {
    pub fn name(self) -> &'static str {
        match self {
            BaseMetric::Accuracy => "accuracy",
            BaseMetric::NegLoss => "neg_loss",
            BaseMetric::Angle => "angle",
        }
    }
}

impl std::str::FromStr for BaseMetric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "accuracy" => Ok(BaseMetric::Accuracy),
            "neg_loss" => Ok(BaseMetric::NegLoss),
            "angle" => Ok(BaseMetric::Angle),
            other => Err(Error::InvalidParameter(format!("unknown base metric {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MetricSpec {
    Flatness { flatness: FlatnessConfig },
    Base { base: BaseMetric },
    Combined { base: BaseMetric, gamma: f64, flatness: FlatnessConfig },
}

impl MetricSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            MetricSpec::Flatness { flatness } => flatness.validate(),
            MetricSpec::Base { .. } => Ok(()),
            MetricSpec::Combined { gamma, flatness, .. } => {
                if !(gamma.is_finite() && *gamma >= 0.0) {
                    return Err(Error::InvalidParameter(format!("gamma {gamma} must be >= 0")));
                }
                flatness.validate()
            }
        }
    }

    pub fn name(&self) -> String {
        match self {
            MetricSpec::Flatness { .. } => "flatness".into(),
            MetricSpec::Base { base } => base.name().into(),
            MetricSpec::Combined { base, gamma, .. } => format!("combined({},{gamma})", base.name()),
        }
    }

    /// Stable digest of the full configuration.
    pub fn digest(&self) -> String {
        short_digest(serde_json::to_string(self).expect("metric spec serializes").as_bytes())
    }
}

fn base_score(net: &SuperNet, g: &Genotype, base: BaseMetric, eval: &Batch) -> Result<f64> {
    match base {
        BaseMetric::Accuracy => Ok(eval_loss_acc(&net.extract_subnet(g)?, g, net.space(), eval)?.1),
        BaseMetric::NegLoss => Ok(-eval_loss_acc(&net.extract_subnet(g)?, g, net.space(), eval)?.0),
        BaseMetric::Angle => angle_score(&net.extract_initial_subnet(g)?, &net.extract_subnet(g)?),
    }
}

/// Scores one genotype of the supernet. `seed` drives the flatness noise.
pub fn score_genotype(net: &SuperNet, g: &Genotype, metric: &MetricSpec, eval: &Batch, seed: u64) -> Result<f64> {
    match metric {
        MetricSpec::Flatness { flatness } => {
            let params = net.extract_subnet(g)?;
            flatness_score(&params, g, net.space(), eval, flatness, &mut rng_from_seed(seed))
        }
        MetricSpec::Base { base } => base_score(net, g, *base, eval),
        MetricSpec::Combined { base, gamma, flatness } => {
            let b = base_score(net, g, *base, eval)?;
            if *gamma == 0.0 {
                return Ok(b);
            }
            let params = net.extract_subnet(g)?;
            let f = flatness_score(&params, g, net.space(), eval, flatness, &mut rng_from_seed(seed))?;
            Ok(combined_score(b, f, *gamma, flatness.sigma1()))
        }
    }
}

/// Per-genotype seed: the base seed mixed with the genotype's stable hash.
pub fn derived_seed(base_seed: u64, g: &Genotype) -> u64 {
    base_seed ^ g.stable_hash()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRecord {
    pub genotype: Genotype,
    pub metric_name: String,
    pub value: f64,
    pub seed: u64,
    pub config_digest: String,
}

#[derive(Serialize, Deserialize)]
struct ScoreRow {
    genotype: String,
    metric: String,
    value: f64,
    seed: u64,
    config_digest: String,
}

impl ScoreRecord {
    pub fn write_csv<W: Write>(records: &[ScoreRecord], space: &SearchSpaceSpec, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        // explicit header so an empty record list still carries it
        w.write_record(["genotype", "metric", "value", "seed", "config_digest"])?;
        for r in records {
            w.write_record(&[
                space.encode(&r.genotype),
                r.metric_name.clone(),
                r.value.to_string(),
                r.seed.to_string(),
                r.config_digest.clone(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(space: &SearchSpaceSpec, input: R) -> Result<Vec<ScoreRecord>> {
        let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(input);
        r.deserialize::<ScoreRow>()
            .map(|row| {
                let row = row?;
                Ok(ScoreRecord {
                    genotype: space.decode(&row.genotype)?,
                    metric_name: row.metric,
                    value: row.value,
                    seed: row.seed,
                    config_digest: row.config_digest,
                })
            })
            .collect()
    }
}

/// Scores every genotype against the supernet, in input order.
pub fn score_population(
    net: &SuperNet,
    genotypes: &[Genotype],
    metric: &MetricSpec,
    eval: &Batch,
    base_seed: u64,
    jobs: usize,
) -> Result<Vec<ScoreRecord>> {
    metric.validate()?;
    let name = metric.name();
    let digest = metric.digest();
    crate::par::map_ordered(genotypes, jobs, |g| {
        let seed = derived_seed(base_seed, g);
        score_genotype(net, g, metric, eval, seed)
            .map(|value| ScoreRecord {
                genotype: g.clone(),
                metric_name: name.clone(),
                value,
                seed,
                config_digest: digest.clone(),
            })
            .map_err(|e| Error::Scoring { genotype: net.space().encode(g), source: Box::new(e) })
    })
    .into_iter()
    .collect()
}
