//! Evolutionary search over genotypes with top-K selection, uniform
//! crossover and per-edge mutation. The scorer is any function of the
//! genotype; higher is better.

use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::io::{BufRead, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::searchspace::{Genotype, SearchSpaceSpec};
use crate::seed::rng_from_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvolutionConfig {
    pub population_size: usize,
    pub iterations: usize,
    pub top_k: usize,
    pub crossover_count: usize,
    pub mutation_count: usize,
    pub mutation_rate: f64,
    pub seed: u64,
}

impl Default for EvolutionConfig {
    fn default() -> Self {
        Self::with_population(100, 20, 0)
    }
}

impl EvolutionConfig {
    /// Half the population survives, a quarter of it is refilled by
    /// crossover and the rest by mutation.
    pub fn with_population(population_size: usize, iterations: usize, seed: u64) -> Self {
        let top_k = (population_size / 2).max(1);
        let crossover_count = population_size / 4;
        Self {
            population_size,
            iterations,
            top_k,
            crossover_count,
            mutation_count: population_size.saturating_sub(top_k + crossover_count),
            mutation_rate: 0.1,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InfeasibleConfig(m));
        if self.population_size < 2 {
            return bad(format!("population_size {} < 2", self.population_size));
        }
        if self.iterations == 0 {
            return bad("iterations must be >= 1".into());
        }
        if self.top_k == 0 || self.top_k > self.population_size {
            return bad(format!("top_k {} not in [1, {}]", self.top_k, self.population_size));
        }
        if self.top_k + self.crossover_count + self.mutation_count < self.population_size {
            return bad(format!(
                "top_k + crossover_count + mutation_count = {} cannot refill a population of {}",
                self.top_k + self.crossover_count + self.mutation_count,
                self.population_size
            ));
        }
        if !(0.0..=1.0).contains(&self.mutation_rate) {
            return bad(format!("mutation_rate {} not in [0, 1]", self.mutation_rate));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    SeedRandom,
    Crossover,
    Mutation,
    Elite,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub genotype: Genotype,
    pub score: f64,
    pub origin: Origin,
}

/// Descending score, then ascending genotype.
fn rank(a: &Candidate, b: &Candidate) -> Ordering {
    b.score
        .partial_cmp(&a.score)
        .unwrap_or(Ordering::Equal)
        .then_with(|| a.genotype.cmp(&b.genotype))
}

/// Scored population of one iteration, sorted best first.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub iteration: usize,
    pub population: Vec<Candidate>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchOutcome {
    pub best: Candidate,
    pub history: Vec<Snapshot>,
    /// Genotypes whose scoring failed, with the reason; they were discarded.
    pub failures: Vec<(Genotype, String)>,
}

/// Best candidate across every snapshot.
pub fn best_of_history(history: &[Snapshot]) -> Result<Candidate> {
    history
        .iter()
        .flat_map(|s| &s.population)
        .min_by(|a, b| rank(a, b))
        .cloned()
        .ok_or(Error::EmptyHistory)
}

fn draw_unseen(
    space: &SearchSpaceSpec,
    seen: &mut BTreeSet<Genotype>,
    total: u128,
    rng: &mut impl Rng,
) -> Option<Genotype> {
    if seen.len() as u128 >= total {
        return None;
    }
    for _ in 0..4096 {
        let g = space.random_genotype(rng);
        if seen.insert(g.clone()) {
            return Some(g);
        }
    }
    None
}

pub fn evolve<F>(space: &SearchSpaceSpec, mut scorer: F, cfg: &EvolutionConfig) -> Result<SearchOutcome>
where
    F: FnMut(&Genotype) -> Result<f64>,
{
    evolve_batched(space, |gs: &[Genotype]| gs.iter().map(&mut scorer).collect(), cfg)
}

/// Like [`evolve`], but hands every iteration's unscored candidates to the
/// scorer at once (so it may score them concurrently). The scorer must
/// return one result per genotype, in order.
pub fn evolve_batched<F>(space: &SearchSpaceSpec, mut scorer: F, cfg: &EvolutionConfig) -> Result<SearchOutcome>
where
    F: FnMut(&[Genotype]) -> Vec<Result<f64>>,
{
    cfg.validate()?;
    let mut rng = rng_from_seed(cfg.seed);
    let total = space.genotype_count().unwrap_or(u128::MAX);
    let mut seen = BTreeSet::new();
    let mut pending: Vec<(Genotype, Origin)> = Vec::new();
    while pending.len() < cfg.population_size {
        match draw_unseen(space, &mut seen, total, &mut rng) {
            Some(g) => pending.push((g, Origin::SeedRandom)),
            None => break,
        }
    }

    let mut elites: Vec<Candidate> = Vec::new();
    let mut history = Vec::with_capacity(cfg.iterations);
    let mut failures = Vec::new();
    for iteration in 0..cfg.iterations {
        let mut population: Vec<Candidate> = elites
            .drain(..)
            .map(|c| Candidate { origin: Origin::Elite, ..c })
            .collect();
        let batch: Vec<Genotype> = pending.iter().map(|(g, _)| g.clone()).collect();
        let scores = scorer(&batch);
        if scores.len() != batch.len() {
            return Err(Error::InvalidParameter(format!(
                "scorer returned {} results for {} genotypes",
                scores.len(),
                batch.len()
            )));
        }
        for ((genotype, origin), result) in pending.drain(..).zip(scores) {
            match result {
                Ok(score) if !score.is_nan() => population.push(Candidate { genotype, score, origin }),
                Ok(_) => failures.push((genotype, "score is NaN".to_string())),
                Err(e) => failures.push((genotype, e.to_string())),
            }
        }
        population.sort_by(rank);
        history.push(Snapshot { iteration, population: population.clone() });
        population.truncate(cfg.top_k);
        elites = population;

        if iteration + 1 == cfg.iterations {
            break;
        }
        if !elites.is_empty() {
            for _ in 0..cfg.crossover_count {
                for _ in 0..16 {
                    let a = &elites[rng.random_range(0..elites.len())].genotype;
                    let b = &elites[rng.random_range(0..elites.len())].genotype;
                    let child = space.crossover(a, b, &mut rng)?;
                    if seen.insert(child.clone()) {
                        pending.push((child, Origin::Crossover));
                        break;
                    }
                }
            }
            for _ in 0..cfg.mutation_count {
                for _ in 0..16 {
                    let parent = &elites[rng.random_range(0..elites.len())].genotype;
                    let child = space.mutate(parent, cfg.mutation_rate, &mut rng)?;
                    if seen.insert(child.clone()) {
                        pending.push((child, Origin::Mutation));
                        break;
                    }
                }
            }
        }
        while elites.len() + pending.len() < cfg.population_size {
            match draw_unseen(space, &mut seen, total, &mut rng) {
                Some(g) => pending.push((g, Origin::SeedRandom)),
                None => break,
            }
        }
    }
    let best = best_of_history(&history)?;
    Ok(SearchOutcome { best, history, failures })
}

#[derive(Serialize, Deserialize)]
struct HistoryLine {
    iteration: usize,
    genotype: String,
    value: f64,
    origin: Origin,
}

/// One JSON object per candidate per iteration. Lines starting with `#`
/// are skipped by [`read_history`].
pub fn write_history<W: Write>(history: &[Snapshot], space: &SearchSpaceSpec, mut out: W) -> Result<()> {
    for snap in history {
        for c in &snap.population {
            let line = HistoryLine {
                iteration: snap.iteration,
                genotype: space.encode(&c.genotype),
                value: c.score,
                origin: c.origin,
            };
            let text = serde_json::to_string(&line).map_err(|e| Error::Parse(e.to_string()))?;
            writeln!(out, "{text}")?;
        }
    }
    Ok(())
}

pub fn read_history<R: BufRead>(space: &SearchSpaceSpec, input: R) -> Result<Vec<Snapshot>> {
    let mut history: Vec<Snapshot> = Vec::new();
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let h: HistoryLine = serde_json::from_str(&line).map_err(|e| Error::Parse(e.to_string()))?;
        let c = Candidate { genotype: space.decode(&h.genotype)?, score: h.value, origin: h.origin };
        match history.last_mut() {
            Some(s) if s.iteration == h.iteration => s.population.push(c),
            _ => history.push(Snapshot { iteration: h.iteration, population: vec![c] }),
        }
    }
    Ok(history)
}
