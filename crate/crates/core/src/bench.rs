//! Ground-truth oracle and proxy evaluation: from-scratch training of every
//! architecture, Kendall's tau between a proxy and the oracle, and
//! loss-curvature profiles along random rays.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Split};
use crate::error::{Error, Result};
use crate::metrics::{
    perturbed_losses, DirectionSource, GaussianDirections, LossSurface, NetworkLoss, NoiseMode, ScoreRecord,
};
use crate::nn::{backward_step, cosine_lr, init_params, Batch, OptimizerConfig, ParamSet, PerturbMask, SgdState};
use crate::searchspace::{Genotype, SearchSpaceSpec};
use crate::seed::{derive_seed, rng_from_seed, short_digest};

#[derive(Debug, Clone, PartialEq)]
pub struct ScratchResult {
    pub test_accuracy: f64,
    pub final_val_loss: f64,
    pub params: ParamSet,
}

/// Trains one architecture from a fresh seeded initialization.
pub fn train_from_scratch(
    genotype: &Genotype,
    space: &SearchSpaceSpec,
    data: &Dataset,
    cfg: &OptimizerConfig,
    seed: u64,
) -> Result<ScratchResult> {
    cfg.validate()?;
    let mut rng = rng_from_seed(derive_seed(seed, "init"));
    let mut params = init_params(space, Some(genotype), data.input_dim(), data.classes(), &mut rng)?;
    let shuffle_seed = derive_seed(seed, "shuffle");
    let mut state = SgdState::new();
    for epoch in 0..cfg.epochs {
        let lr = cosine_lr(epoch, cfg.epochs, cfg);
        for batch in data.batches(Split::Train, cfg.batch_size, shuffle_seed, epoch)? {
            backward_step(&mut params, genotype, space, &batch, lr, cfg, &mut state)?;
        }
    }
    let (final_val_loss, _) = crate::metrics::eval_loss_acc(&params, genotype, space, &data.split_batch(Split::Val))?;
    let (_, test_accuracy) = crate::metrics::eval_loss_acc(&params, genotype, space, &data.split_batch(Split::Test))?;
    Ok(ScratchResult { test_accuracy, final_val_loss, params })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthEntry {
    pub genotype: Genotype,
    pub test_accuracy: f64,
    pub final_val_loss: f64,
    pub seed_count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthTable {
    pub entries: Vec<GroundTruthEntry>,
    pub space_preset: String,
    pub training_config_digest: String,
}

#[derive(Serialize, Deserialize)]
struct TruthRow {
    genotype: String,
    test_accuracy: f64,
    final_val_loss: f64,
    seed_count: usize,
}

fn footer(preset: &str, digest: &str) -> String {
    format!("# preset={preset} config_digest={digest}\n")
}

fn row_text(space: &SearchSpaceSpec, e: &GroundTruthEntry) -> String {
    format!(
        "{},{},{},{}\n",
        space.encode(&e.genotype),
        e.test_accuracy,
        e.final_val_loss,
        e.seed_count
    )
}

const TRUTH_HEADER: &str = "genotype,test_accuracy,final_val_loss,seed_count\n";

impl GroundTruthTable {
    pub fn get(&self, g: &Genotype) -> Option<&GroundTruthEntry> {
        self.entries.iter().find(|e| &e.genotype == g)
    }

    pub fn to_csv_string(&self, space: &SearchSpaceSpec) -> String {
        let mut s = String::from(TRUTH_HEADER);
        for e in &self.entries {
            s.push_str(&row_text(space, e));
        }
        s.push_str(&footer(&self.space_preset, &self.training_config_digest));
        s
    }

    /// Parses a table; a missing footer (interrupted run) yields empty
    /// preset and digest.
    pub fn read_csv<R: Read>(space: &SearchSpaceSpec, input: R) -> Result<Self> {
        let mut text = String::new();
        BufReader::new(input).read_to_string(&mut text)?;
        let (mut preset, mut digest) = (String::new(), String::new());
        if let Some(last) = text.lines().rev().find(|l| l.starts_with('#')) {
            for kv in last.trim_start_matches('#').split_whitespace() {
                match kv.split_once('=') {
                    Some(("preset", v)) => preset = v.to_string(),
                    Some(("config_digest", v)) => digest = v.to_string(),
                    _ => {}
                }
            }
        }
        let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
        let entries = r
            .deserialize::<TruthRow>()
            .map(|row| {
                let row = row?;
                Ok(GroundTruthEntry {
                    genotype: space.decode(&row.genotype)?,
                    test_accuracy: row.test_accuracy,
                    final_val_loss: row.final_val_loss,
                    seed_count: row.seed_count,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { entries, space_preset: preset, training_config_digest: digest })
    }

    pub fn is_complete(&self) -> bool {
        !self.training_config_digest.is_empty()
    }
}

/// Settings for building a ground-truth table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleConfig {
    pub optimizer: OptimizerConfig,
    pub seeds_per_arch: usize,
    pub base_seed: u64,
}

impl OracleConfig {
    pub fn digest(&self, space: &SearchSpaceSpec, data: &Dataset) -> String {
        let blob = serde_json::json!({
            "oracle": self,
            "space": space,
            "dataset": data.digest(),
        });
        short_digest(blob.to_string().as_bytes())
    }

    pub fn seed_for(&self, space: &SearchSpaceSpec, g: &Genotype, replicate: usize) -> u64 {
        derive_seed(self.base_seed, &format!("oracle/{}/{replicate}", space.encode(g)))
    }
}

/// Mean test accuracy and validation loss over `seeds_per_arch` runs.
pub fn oracle_entry(space: &SearchSpaceSpec, data: &Dataset, cfg: &OracleConfig, g: &Genotype) -> Result<GroundTruthEntry> {
    if cfg.seeds_per_arch == 0 {
        return Err(Error::InvalidParameter("seeds_per_arch must be >= 1".into()));
    }
    let (mut acc, mut loss) = (0.0, 0.0);
    for rep in 0..cfg.seeds_per_arch {
        let r = train_from_scratch(g, space, data, &cfg.optimizer, cfg.seed_for(space, g, rep))?;
        acc += r.test_accuracy;
        loss += r.final_val_loss;
    }
    let n = cfg.seeds_per_arch as f64;
    Ok(GroundTruthEntry { genotype: g.clone(), test_accuracy: acc / n, final_val_loss: loss / n, seed_count: cfg.seeds_per_arch })
}

/// Trains every genotype of an enumerable space.
pub fn build_ground_truth_table(
    space: &SearchSpaceSpec,
    preset: &str,
    data: &Dataset,
    cfg: &OracleConfig,
    jobs: usize,
) -> Result<GroundTruthTable> {
    let all = space.enumerate_all()?;
    build_table_for(space, preset, data, cfg, &all, jobs)
}

pub fn build_table_for(
    space: &SearchSpaceSpec,
    preset: &str,
    data: &Dataset,
    cfg: &OracleConfig,
    genotypes: &[Genotype],
    jobs: usize,
) -> Result<GroundTruthTable> {
    let entries = crate::par::map_ordered(genotypes, jobs, |g| oracle_entry(space, data, cfg, g))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    Ok(GroundTruthTable {
        entries,
        space_preset: preset.to_string(),
        training_config_digest: cfg.digest(space, data),
    })
}

/// Builds (or resumes) a table file. Rows already on disk are kept when
/// they match the expected genotype order; at most `max_new` new rows are
/// trained per call. Returns the table once the footer is written, `None`
/// while it is still partial.
#[allow(clippy::too_many_arguments)]
pub fn build_table_file(
    path: &Path,
    space: &SearchSpaceSpec,
    preset: &str,
    data: &Dataset,
    cfg: &OracleConfig,
    genotypes: &[Genotype],
    jobs: usize,
    max_new: Option<usize>,
    progress: &mut dyn FnMut(usize, usize),
) -> Result<Option<GroundTruthTable>> {
    let digest = cfg.digest(space, data);
    let done = if path.exists() {
        let existing = GroundTruthTable::read_csv(space, File::open(path)?)?;
        if existing.is_complete() {
            if existing.training_config_digest != digest {
                return Err(Error::InvalidParameter(format!(
                    "{} was built with config {}, current config is {digest}",
                    path.display(),
                    existing.training_config_digest
                )));
            }
            return Ok(Some(existing));
        }
        for (e, g) in existing.entries.iter().zip(genotypes) {
            if &e.genotype != g {
                return Err(Error::InvalidParameter(format!(
                    "{} holds rows in an unexpected order; delete it to restart",
                    path.display()
                )));
            }
        }
        existing.entries.len()
    } else {
        File::create(path)?.write_all(TRUTH_HEADER.as_bytes())?;
        0
    };
    let todo = &genotypes[done.min(genotypes.len())..];
    let todo = match max_new {
        Some(n) => &todo[..n.min(todo.len())],
        None => todo,
    };
    let mut file = OpenOptions::new().append(true).open(path)?;
    let mut finished = done;
    for chunk in todo.chunks(jobs.max(1)) {
        let rows = crate::par::map_ordered(chunk, jobs, |g| oracle_entry(space, data, cfg, g));
        for row in rows {
            file.write_all(row_text(space, &row?).as_bytes())?;
            finished += 1;
        }
        file.flush()?;
        progress(finished, genotypes.len());
    }
    if finished < genotypes.len() {
        return Ok(None);
    }
    file.write_all(footer(preset, &digest).as_bytes())?;
    file.flush()?;
    drop(file);
    Ok(Some(GroundTruthTable::read_csv(space, File::open(path)?)?))
}

/// Kendall rank correlation with pair counts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TauReport {
    pub n: usize,
    pub tau_b: f64,
    pub tau_a: f64,
    /// Concordant minus discordant pairs.
    pub c_minus_d: i64,
    /// Pairs tied only in the first input.
    pub ties_first: u64,
    /// Pairs tied only in the second input.
    pub ties_second: u64,
}

fn cmp_f64(a: &f64, b: &f64) -> Ordering {
    a.partial_cmp(b).expect("inputs checked for NaN")
}

fn tied_pairs(sorted: &[f64]) -> u64 {
    let mut total = 0u64;
    let mut run = 1u64;
    for w in sorted.windows(2) {
        if w[0] == w[1] {
            run += 1;
        } else {
            total += run * (run - 1) / 2;
            run = 1;
        }
    }
    total + run * (run - 1) / 2
}

/// Merge sort counting inversions.
fn count_swaps(v: &mut [f64], buf: &mut Vec<f64>) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut swaps = count_swaps(&mut v[..mid], buf) + count_swaps(&mut v[mid..], buf);
    buf.clear();
    let (mut i, mut j) = (0, mid);
    while i < mid && j < n {
        if v[j] < v[i] {
            buf.push(v[j]);
            swaps += (mid - i) as u64;
            j += 1;
        } else {
            buf.push(v[i]);
            i += 1;
        }
    }
    buf.extend_from_slice(&v[i..mid]);
    buf.extend_from_slice(&v[j..n]);
    v.copy_from_slice(buf);
    swaps
}

/// Kendall's tau-b (with tau-a alongside) in `O(n log n)`.
pub fn kendall_tau_report(first: &[f64], second: &[f64]) -> Result<TauReport> {
    if first.len() != second.len() {
        return Err(Error::LengthMismatch { left: first.len(), right: second.len() });
    }
    let n = first.len();
    if n < 2 {
        return Err(Error::Undefined("need at least two pairs"));
    }
    if first.iter().chain(second).any(|v| v.is_nan()) {
        return Err(Error::InvalidParameter("rank correlation input contains NaN".into()));
    }
    let mut pairs: Vec<(f64, f64)> = first.iter().copied().zip(second.iter().copied()).collect();
    pairs.sort_by(|a, b| cmp_f64(&a.0, &b.0).then_with(|| cmp_f64(&a.1, &b.1)));

    let xs: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let ties_x = tied_pairs(&xs);
    let mut ties_xy = 0u64;
    let mut run = 1u64;
    for w in pairs.windows(2) {
        if w[0] == w[1] {
            run += 1;
        } else {
            ties_xy += run * (run - 1) / 2;
            run = 1;
        }
    }
    ties_xy += run * (run - 1) / 2;

    let mut ys: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let swaps = count_swaps(&mut ys, &mut Vec::with_capacity(n));
    let ties_y = tied_pairs(&ys);

    let n0 = (n as u64) * (n as u64 - 1) / 2;
    let c_minus_d = n0 as i64 - ties_x as i64 - ties_y as i64 + ties_xy as i64 - 2 * swaps as i64;
    let left = n0 - ties_y; // C + D + ties only in x
    let right = n0 - ties_x; // C + D + ties only in y
    if left == 0 || right == 0 {
        return Err(Error::Undefined("one input is entirely tied"));
    }
    Ok(TauReport {
        n,
        tau_b: c_minus_d as f64 / ((left as f64) * (right as f64)).sqrt(),
        tau_a: c_minus_d as f64 / n0 as f64,
        c_minus_d,
        ties_first: ties_x - ties_xy,
        ties_second: ties_y - ties_xy,
    })
}

/// Kendall's tau-b.
pub fn kendall_tau(scores: &[f64], ground_truth: &[f64]) -> Result<f64> {
    kendall_tau_report(scores, ground_truth).map(|r| r.tau_b)
}

fn align(a: &[ScoreRecord], b: &[ScoreRecord], space: Option<&SearchSpaceSpec>) -> Result<(Vec<f64>, Vec<f64>)> {
    let show = |g: &Genotype| match space {
        Some(s) => s.encode(g),
        None => format!("{:?}", g.op_indices()),
    };
    let mut by_genotype = BTreeMap::new();
    for r in b {
        if by_genotype.insert(&r.genotype, r.value).is_some() {
            return Err(Error::GenotypeSetMismatch(format!("duplicate genotype {}", show(&r.genotype))));
        }
    }
    if a.len() != b.len() {
        return Err(Error::GenotypeSetMismatch(format!("{} vs {} records", a.len(), b.len())));
    }
    let mut va = Vec::with_capacity(a.len());
    let mut vb = Vec::with_capacity(a.len());
    for r in a {
        let other = by_genotype
            .remove(&r.genotype)
            .ok_or_else(|| Error::GenotypeSetMismatch(format!("{} missing from second set", show(&r.genotype))))?;
        va.push(r.value);
        vb.push(other);
    }
    Ok((va, vb))
}

/// Tau-b between two metrics, paired by genotype. Both lists must cover
/// exactly the same genotypes.
pub fn metric_rank_correlation(records_a: &[ScoreRecord], records_b: &[ScoreRecord]) -> Result<f64> {
    let (a, b) = align(records_a, records_b, None)?;
    kendall_tau(&a, &b)
}

/// Pairs score records with ground-truth accuracy. With `allow_subset`
/// the table may hold extra genotypes; otherwise the sets must match.
pub fn align_with_truth(
    records: &[ScoreRecord],
    table: &GroundTruthTable,
    space: &SearchSpaceSpec,
    allow_subset: bool,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let truth: BTreeMap<&Genotype, f64> = table.entries.iter().map(|e| (&e.genotype, e.test_accuracy)).collect();
    if !allow_subset && truth.len() != records.len() {
        return Err(Error::GenotypeSetMismatch(format!(
            "{} score records vs {} ground-truth entries",
            records.len(),
            truth.len()
        )));
    }
    let mut seen = std::collections::BTreeSet::new();
    let mut scores = Vec::with_capacity(records.len());
    let mut acc = Vec::with_capacity(records.len());
    for r in records {
        if !seen.insert(&r.genotype) {
            return Err(Error::GenotypeSetMismatch(format!("duplicate genotype {}", space.encode(&r.genotype))));
        }
        let t = truth.get(&r.genotype).ok_or_else(|| {
            Error::GenotypeSetMismatch(format!("{} has no ground-truth entry", space.encode(&r.genotype)))
        })?;
        scores.push(r.value);
        acc.push(*t);
    }
    Ok((scores, acc))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurvatureProfile {
    pub genotype: Genotype,
    pub sigmas: Vec<f64>,
    pub mean_losses: Vec<f64>,
    pub replicates: usize,
}

impl CurvatureProfile {
    pub fn to_csv_string(&self) -> String {
        let mut s = String::from("sigma,mean_loss\n");
        for (sigma, loss) in self.sigmas.iter().zip(&self.mean_losses) {
            s.push_str(&format!("{sigma},{loss}\n"));
        }
        s
    }

    pub fn read_csv<R: BufRead>(input: R) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(input);
        let mut sigmas = Vec::new();
        let mut losses = Vec::new();
        for rec in r.deserialize::<(f64, f64)>() {
            let (s, l) = rec?;
            sigmas.push(s);
            losses.push(l);
        }
        Ok((sigmas, losses))
    }
}

/// Mean of `L(θ + σ g_r)` over the replicates, per σ, for any loss surface
/// and direction source.
pub fn mean_ray_losses<S, D>(
    surface: &S,
    params: &ParamSet,
    sigmas: &[f64],
    replicates: usize,
    directions: &mut D,
) -> Result<Vec<f64>>
where
    S: LossSurface + ?Sized,
    D: DirectionSource + ?Sized,
{
    if sigmas.is_empty() || replicates == 0 {
        return Err(Error::InvalidParameter("need at least one sigma and one replicate".into()));
    }
    if sigmas.iter().any(|s| !(s.is_finite() && *s >= 0.0)) || sigmas.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidParameter("sigmas must be finite, >= 0 and strictly ascending".into()));
    }
    let losses = perturbed_losses(surface, params, sigmas, replicates, NoiseMode::Ray, PerturbMask::All, directions)?;
    Ok((0..sigmas.len())
        .map(|i| {
            // running mean keeps identical samples exact
            losses.iter().enumerate().fold(0.0, |m, (k, row)| m + (row[i] - m) / (k + 1) as f64)
        })
        .collect())
}

/// Mean validation loss along `replicates` random rays at each σ, with
/// every weight perturbed. `params` is never modified.
pub fn loss_curvature_profile(
    params: &ParamSet,
    genotype: &Genotype,
    space: &SearchSpaceSpec,
    val_set: &Batch,
    sigmas: &[f64],
    replicates: usize,
    rng: &mut impl rand::Rng,
) -> Result<CurvatureProfile> {
    let surface = NetworkLoss { space, genotype, batch: val_set };
    let mean_losses = mean_ray_losses(&surface, params, sigmas, replicates, &mut GaussianDirections(rng))?;
    Ok(CurvatureProfile { genotype: genotype.clone(), sigmas: sigmas.to_vec(), mean_losses, replicates })
}
