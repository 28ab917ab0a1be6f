//! Browser demo. [`DemoState`] holds the pipeline and returns JSON strings;
//! [`Demo`] is the thin wasm-bindgen wrapper the page talks to.

use flatnas::bench::{build_ground_truth_table, kendall_tau_report, loss_curvature_profile, GroundTruthTable, OracleConfig};
use flatnas::data::{Dataset, GeneratorSpec, Split};
use flatnas::metrics::{score_population, FlatnessConfig, MetricSpec, SIGMA_GRIDS};
use flatnas::nn::{Batch, OptimizerConfig};
use flatnas::seed::{derive_seed, rng_from_seed};
use flatnas::supernet::SuperNet;
use flatnas::SearchSpaceSpec;
use serde::Serialize;
use wasm_bindgen::prelude::*;

#[derive(Serialize)]
struct TrainSummary {
    epoch_losses: Vec<f64>,
    oracle_best: String,
    oracle_worst: String,
}

#[derive(Serialize)]
struct RankRow {
    genotype: String,
    flatness: f64,
    accuracy: f64,
}

#[derive(Serialize)]
struct Ranking {
    rows: Vec<RankRow>,
    tau_b: f64,
}

#[derive(Serialize)]
struct Profile {
    genotype: String,
    sigmas: Vec<f64>,
    mean_losses: Vec<f64>,
}

pub struct DemoState {
    space: SearchSpaceSpec,
    seed: u64,
    data: Dataset,
    eval: Batch,
    net: Option<SuperNet>,
    table: Option<GroundTruthTable>,
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

impl DemoState {
    pub fn new(classes: usize, per_class: usize, noise_std: f64, seed: u64) -> Result<Self, String> {
        let spec = GeneratorSpec::Spirals { classes, per_class, noise_std, lift_dim: 8, seed: derive_seed(seed, "data") };
        let data = spec.generate().map_err(err)?;
        let eval = data.split_batch(Split::Val);
        Ok(Self { space: SearchSpaceSpec::micro(), seed, data, eval, net: None, table: None })
    }

    /// `[[x, y, label], ...]` using the first two input features.
    pub fn points(&self) -> String {
        let pts: Vec<(f64, f64, usize)> =
            (0..self.data.len()).map(|i| (self.data.row(i)[0], self.data.row(i)[1], self.data.labels()[i])).collect();
        serde_json::to_string(&pts).expect("points serialize")
    }

    /// Trains the supernet and a one-seed oracle over all 27 architectures.
    pub fn train(&mut self, epochs: usize, oracle_epochs: usize) -> Result<String, String> {
        let mut net = SuperNet::new(
            self.space.clone(),
            self.data.input_dim(),
            self.data.classes(),
            &mut rng_from_seed(derive_seed(self.seed, "supernet-init")),
        )
        .map_err(err)?;
        let cfg = OptimizerConfig { epochs, ..OptimizerConfig::default() };
        let report = net.train(&self.data, &cfg, &mut rng_from_seed(derive_seed(self.seed, "supernet-train"))).map_err(err)?;
        let oracle = OracleConfig {
            optimizer: OptimizerConfig { epochs: oracle_epochs, ..OptimizerConfig::scratch() },
            seeds_per_arch: 1,
            base_seed: derive_seed(self.seed, "oracle"),
        };
        let table = build_ground_truth_table(&self.space, "micro", &self.data, &oracle, 1).map_err(err)?;
        let by_acc = |a: &&flatnas::bench::GroundTruthEntry, b: &&flatnas::bench::GroundTruthEntry| {
            a.test_accuracy.total_cmp(&b.test_accuracy).then_with(|| b.genotype.cmp(&a.genotype))
        };
        let best = &table.entries.iter().max_by(by_acc).expect("27 entries").genotype;
        let worst = &table.entries.iter().min_by(by_acc).expect("27 entries").genotype;
        let summary = TrainSummary {
            epoch_losses: report.epoch_losses.clone(),
            oracle_best: self.space.encode(best),
            oracle_worst: self.space.encode(worst),
        };
        self.net = Some(net);
        self.table = Some(table);
        Ok(serde_json::to_string(&summary).expect("summary serializes"))
    }

    fn trained(&self) -> Result<(&SuperNet, &GroundTruthTable), String> {
        match (&self.net, &self.table) {
            (Some(n), Some(t)) => Ok((n, t)),
            _ => Err("train the supernet first".into()),
        }
    }

    /// Flatness of every architecture at the given alpha and named sigma grid,
    /// next to its oracle accuracy, sorted by flatness.
    pub fn rank(&self, alpha: f64, grid: &str) -> Result<String, String> {
        let (net, table) = self.trained()?;
        let sigmas = SIGMA_GRIDS
            .iter()
            .find(|(name, _)| *name == grid)
            .map(|(_, s)| s.to_vec())
            .ok_or_else(|| format!("unknown sigma grid {grid:?}"))?;
        let metric = MetricSpec::Flatness { flatness: FlatnessConfig { alpha, sigmas, replicates: 4, ..FlatnessConfig::default() } };
        metric.validate().map_err(err)?;
        let genotypes: Vec<_> = table.entries.iter().map(|e| e.genotype.clone()).collect();
        let records = score_population(net, &genotypes, &metric, &self.eval, derive_seed(self.seed, "flatness"), 1).map_err(err)?;
        let values: Vec<f64> = records.iter().map(|r| r.value).collect();
        let truth: Vec<f64> = table.entries.iter().map(|e| e.test_accuracy).collect();
        let tau_b = kendall_tau_report(&values, &truth).map(|r| r.tau_b).unwrap_or(f64::NAN);
        let mut rows: Vec<RankRow> = records
            .iter()
            .zip(&truth)
            .map(|(r, &accuracy)| RankRow { genotype: self.space.encode(&r.genotype), flatness: r.value, accuracy })
            .collect();
        rows.sort_by(|a, b| b.flatness.total_cmp(&a.flatness));
        Ok(serde_json::to_string(&Ranking { rows, tau_b }).expect("ranking serializes"))
    }

    /// Mean validation loss on `points` evenly spaced scales in `[0, sigma_max]`.
    pub fn profile(&self, genotype: &str, sigma_max: f64, points: usize) -> Result<String, String> {
        let (net, _) = self.trained()?;
        if !(sigma_max > 0.0 && sigma_max.is_finite()) || points < 2 {
            return Err("need sigma_max > 0 and at least two points".into());
        }
        let g = self.space.decode(genotype).map_err(err)?;
        let params = net.extract_subnet(&g).map_err(err)?;
        let sigmas: Vec<f64> = (0..points).map(|i| sigma_max * i as f64 / (points - 1) as f64).collect();
        let mut rng = rng_from_seed(derive_seed(self.seed, "profile"));
        let p = loss_curvature_profile(&params, &g, &self.space, &self.eval, &sigmas, 8, &mut rng).map_err(err)?;
        let out = Profile { genotype: genotype.to_string(), sigmas: p.sigmas, mean_losses: p.mean_losses };
        Ok(serde_json::to_string(&out).expect("profile serializes"))
    }

    pub fn genotypes(&self) -> String {
        let names: Vec<String> = self.space.enumerate_all().expect("micro is small").iter().map(|g| self.space.encode(g)).collect();
        serde_json::to_string(&names).expect("names serialize")
    }
}

#[wasm_bindgen]
pub struct Demo(DemoState);

#[wasm_bindgen]
impl Demo {
    #[wasm_bindgen(constructor)]
    pub fn new(classes: usize, per_class: usize, noise_std: f64, seed: u32) -> Result<Demo, JsError> {
        DemoState::new(classes, per_class, noise_std, seed as u64).map(Demo).map_err(|e| JsError::new(&e))
    }

    pub fn points(&self) -> String {
        self.0.points()
    }

    pub fn genotypes(&self) -> String {
        self.0.genotypes()
    }

    pub fn train(&mut self, epochs: usize, oracle_epochs: usize) -> Result<String, JsError> {
        self.0.train(epochs, oracle_epochs).map_err(|e| JsError::new(&e))
    }

    pub fn rank(&self, alpha: f64, grid: &str) -> Result<String, JsError> {
        self.0.rank(alpha, grid).map_err(|e| JsError::new(&e))
    }

    pub fn profile(&self, genotype: &str, sigma_max: f64, points: usize) -> Result<String, JsError> {
        self.0.profile(genotype, sigma_max, points).map_err(|e| JsError::new(&e))
    }
}
