//! Run configuration: TOML file, command-line overrides, seed streams and
//! the config digest embedded in every output.

use std::path::{Path, PathBuf};

use flatnas::bench::OracleConfig;
use flatnas::data::GeneratorSpec;
use flatnas::evolution::EvolutionConfig;
use flatnas::metrics::{BaseMetric, FlatnessConfig, MetricSpec};
use flatnas::nn::OptimizerConfig;
use flatnas::seed::{derive_seed, short_digest};
use flatnas::SearchSpaceSpec;
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Which scorer `search` uses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricSection {
    /// flatness, accuracy, neg_loss, angle or combined
    pub name: String,
    /// Base metric of `combined`.
    pub base: String,
    pub gamma: f64,
}

impl Default for MetricSection {
    fn default() -> Self {
        Self { name: "flatness".into(), base: "accuracy".into(), gamma: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleSection {
    pub optimizer: OptimizerConfig,
    pub seeds_per_arch: usize,
    /// Train only this many seeded-random genotypes instead of the full space.
    pub sample: Option<usize>,
}

impl Default for OracleSection {
    fn default() -> Self {
        Self { optimizer: OptimizerConfig::scratch(), seeds_per_arch: 3, sample: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProfileSection {
    pub sigmas: Vec<f64>,
    pub replicates: usize,
}

impl Default for ProfileSection {
    fn default() -> Self {
        Self { sigmas: vec![0.0, 2e-3, 1e-2, 2e-2, 5e-2, 1e-1], replicates: 16 }
    }
}

/// Everything a run needs. Seeds inside sub-sections are ignored: every
/// random stream is derived from `seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub space_preset: String,
    pub dataset: GeneratorSpec,
    /// Supernet training schedule.
    pub optimizer: OptimizerConfig,
    pub flatness: FlatnessConfig,
    pub evolution: EvolutionConfig,
    pub metric: MetricSection,
    pub oracle: OracleSection,
    pub profile: ProfileSection,
    pub output_dir: PathBuf,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            space_preset: "micro".into(),
            dataset: GeneratorSpec::default(),
            optimizer: OptimizerConfig::default(),
            flatness: FlatnessConfig::default(),
            evolution: EvolutionConfig::default(),
            metric: MetricSection::default(),
            oracle: OracleSection::default(),
            profile: ProfileSection::default(),
            output_dir: PathBuf::from("flatnas-out"),
            seed: 0,
        }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub metric: Option<String>,
    pub gamma: Option<f64>,
    pub alpha: Option<f64>,
    pub sigmas: Option<Vec<f64>>,
    pub preset: Option<String>,
}

pub fn parse_base(name: &str) -> Result<BaseMetric, CliError> {
    match name {
        "flatness" => Err(CliError::usage("combined metric needs a base other than flatness")),
        other => other.parse().map_err(|e: flatnas::Error| CliError::usage(e.to_string())),
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>, overrides: &Overrides) -> Result<Self, CliError> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::usage(format!("cannot read config {}: {e}", p.display())))?;
                toml::from_str(&text).map_err(|e| CliError::usage(format!("config {}: {e}", p.display())))?
            }
            None => RunConfig::default(),
        };
        if let Some(s) = overrides.seed {
            cfg.seed = s;
        }
        if let Some(o) = &overrides.out {
            cfg.output_dir = o.clone();
        }
        if let Some(m) = &overrides.metric {
            cfg.metric.name = m.clone();
        }
        if let Some(g) = overrides.gamma {
            cfg.metric.gamma = g;
        }
        if let Some(a) = overrides.alpha {
            cfg.flatness.alpha = a;
        }
        if let Some(s) = &overrides.sigmas {
            cfg.flatness.sigmas = s.clone();
        }
        if let Some(p) = &overrides.preset {
            cfg.space_preset = p.clone();
        }
        cfg.dataset = cfg.dataset.with_seed(cfg.stream("data"));
        cfg.evolution.seed = cfg.stream("evolution");
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.space()?;
        self.metric_spec()?;
        self.optimizer.validate().map_err(CliError::usage)?;
        self.oracle.optimizer.validate().map_err(CliError::usage)?;
        self.evolution.validate().map_err(CliError::usage)?;
        if self.oracle.seeds_per_arch == 0 {
            return Err(CliError::usage("oracle.seeds_per_arch must be >= 1"));
        }
        Ok(())
    }

    pub fn space(&self) -> Result<SearchSpaceSpec, CliError> {
        SearchSpaceSpec::preset(&self.space_preset).map_err(CliError::usage)
    }

    /// Named sub-stream of the root seed.
    pub fn stream(&self, name: &str) -> u64 {
        derive_seed(self.seed, name)
    }

    pub fn metric_spec(&self) -> Result<MetricSpec, CliError> {
        self.metric_spec_with(&self.flatness, self.metric.gamma)
    }

    pub fn metric_spec_with(&self, flatness: &FlatnessConfig, gamma: f64) -> Result<MetricSpec, CliError> {
        let spec = match self.metric.name.as_str() {
            "flatness" => MetricSpec::Flatness { flatness: flatness.clone() },
            "combined" => MetricSpec::Combined { base: parse_base(&self.metric.base)?, gamma, flatness: flatness.clone() },
            other => MetricSpec::Base {
                base: other
                    .parse()
                    .map_err(|_| CliError::usage(format!("unknown metric {other:?} (flatness, accuracy, neg_loss, angle, combined)")))?,
            },
        };
        spec.validate().map_err(CliError::usage)?;
        Ok(spec)
    }

    pub fn oracle_config(&self) -> OracleConfig {
        OracleConfig {
            optimizer: self.oracle.optimizer.clone(),
            seeds_per_arch: self.oracle.seeds_per_arch,
            base_seed: self.stream("oracle"),
        }
    }

    /// Digest of the resolved configuration, output directory excluded.
    pub fn digest(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Some(map) = v.as_object_mut() {
            map.remove("output_dir");
        }
        short_digest(v.to_string().as_bytes())
    }

    pub fn path(&self, file: &str) -> PathBuf {
        self.output_dir.join(file)
    }
}
