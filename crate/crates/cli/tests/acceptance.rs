//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each
//! and exits non-zero if any failed.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use flatnas::bench::{
    build_ground_truth_table, kendall_tau, loss_curvature_profile, metric_rank_correlation, GroundTruthTable, OracleConfig,
};
use flatnas::data::{Dataset, GeneratorSpec, Split};
use flatnas::evolution::{evolve, write_history, EvolutionConfig};
use flatnas::metrics::{
    derived_seed, flatness_score_with, score_genotype, score_population, BaseMetric, FixedDirection, FlatnessConfig,
    MetricSpec,
};
use flatnas::nn::{backward_step, block_names, init_params, Batch, Group, OptimizerConfig, ParamEntry, ParamSet, SgdState};
use flatnas::seed::{derive_seed, rng_from_seed};
use flatnas::supernet::{sample_uniform_path, SuperNet};
use flatnas::{Genotype, SearchSpaceSpec};
use rand::Rng;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn quadratic_toy() -> Outcome {
    let scalar = |w: f64| ParamSet::new(vec![ParamEntry::new("w", vec![1], vec![w], Group::Cell)]).unwrap();
    let surface = |p: &ParamSet| -> flatnas::Result<f64> { Ok(p.entries()[0].values[0].powi(2)) };
    let cfg = FlatnessConfig { sigmas: vec![0.1, 0.2], alpha: 1.0, replicates: 1, ..FlatnessConfig::default() };
    let score = flatness_score_with(&surface, &scalar(0.0), &cfg, &mut FixedDirection(scalar(1.0))).map_err(|e| e.to_string())?;
    let rel = (score - 2.5).abs() / 2.5;
    check(rel < 1e-9, format!("score {score}, relative error {rel:.1e}"))
}

fn brute_tau_b(s: &[f64], g: &[f64]) -> Option<f64> {
    use std::cmp::Ordering::Equal;
    let (mut c, mut d, mut ts, mut tg) = (0i64, 0i64, 0i64, 0i64);
    for i in 0..s.len() {
        for j in i + 1..s.len() {
            match (s[i].partial_cmp(&s[j]).unwrap(), g[i].partial_cmp(&g[j]).unwrap()) {
                (Equal, Equal) => {}
                (Equal, _) => ts += 1,
                (_, Equal) => tg += 1,
                (a, b) if a == b => c += 1,
                _ => d += 1,
            }
        }
    }
    let denom = (c + d + ts) * (c + d + tg);
    (denom > 0).then(|| (c - d) as f64 / (denom as f64).sqrt())
}

fn kendall_oracle() -> Outcome {
    let mut rng = rng_from_seed(77);
    let mut mismatches = 0;
    for case in 0..100 {
        let n = rng.random_range(2..=50);
        let tied = case % 2 == 0;
        let mut draw = |ties: bool| -> Vec<f64> {
            (0..n).map(|_| if ties { rng.random_range(0..5) as f64 } else { rng.random_range(-1.0..1.0) }).collect()
        };
        let s = draw(tied);
        let g = draw(tied && case % 4 == 0);
        let agree = match (kendall_tau(&s, &g).ok(), brute_tau_b(&s, &g)) {
            (Some(a), Some(b)) => a == b,
            (None, None) => true,
            _ => false,
        };
        let rev: Vec<f64> = s.iter().map(|v| -v).collect();
        let ends = !s.iter().all(|v| *v == s[0]) && (kendall_tau(&s, &s).ok() != Some(1.0) || kendall_tau(&s, &rev).ok() != Some(-1.0));
        if !agree || ends {
            mismatches += 1;
        }
    }
    check(mismatches == 0, format!("{mismatches} mismatches over 100 vector pairs"))
}

fn gradients() -> Outcome {
    let space = SearchSpaceSpec::nano201().with_channels(3).unwrap().with_cells(2).unwrap();
    let mut worst = 0.0f64;
    for (op_index, op) in space.ops().iter().enumerate() {
        let (mut checked, mut seed) = (0, 0u64);
        while checked < 20 {
            seed += 1;
            if seed > 500 {
                return Err(format!("{op:?}: too many instances near ReLU kinks"));
            }
            let mut rng = rng_from_seed(seed * 97 + op_index as u64);
            let mut ops: Vec<usize> = (0..space.edge_count()).map(|_| rng.random_range(0..space.ops().len())).collect();
            let slot = rng.random_range(0..ops.len());
            ops[slot] = op_index;
            let g = space.genotype(ops).unwrap();
            let params = init_params(&space, Some(&g), 4, 3, &mut rng).unwrap();
            let jittered = params
                .entries()
                .iter()
                .map(|e| {
                    let mut e = e.clone();
                    e.values.iter_mut().for_each(|v| *v += rng.random_range(-0.3..0.3));
                    e
                })
                .collect();
            let params = ParamSet::new(jittered).unwrap();
            if let Some(err) = common::max_fd_error(&params, &g, &space, &common::random_batch(6, 4, 3, seed + 5000), 1e-4) {
                worst = worst.max(err);
                checked += 1;
            }
        }
    }
    check(worst < 1e-4, format!("max relative error {worst:.2e} over 20 instances per op"))
}

fn locality() -> Outcome {
    let space = SearchSpaceSpec::nano201().with_channels(3).unwrap().with_cells(2).unwrap();
    let mut rng = rng_from_seed(11);
    let mut params = init_params(&space, None, 4, 3, &mut rng).unwrap();
    let cfg = OptimizerConfig::default();
    let mut state = SgdState::new();
    let mut violations = 0;
    for step in 0..100u64 {
        let path = sample_uniform_path(&space, &mut rng);
        let before = params.clone();
        backward_step(&mut params, &path, &space, &common::random_batch(8, 4, 3, step), 0.05, &cfg, &mut state)
            .map_err(|e| e.to_string())?;
        for cell in 0..space.cells_per_network() {
            for e in 0..space.edge_count() {
                for &op in space.ops().iter().filter(|&&op| op != space.op_at(&path, e)) {
                    for name in block_names(cell, e, op) {
                        let (a, b) = (&before.get(&name).unwrap().values, &params.get(&name).unwrap().values);
                        if a.iter().zip(b).any(|(x, y)| x.to_bits() != y.to_bits()) {
                            violations += 1;
                        }
                    }
                }
            }
        }
    }
    check(violations == 0, format!("{violations} violations over 100 steps"))
}

fn evolution_optimality() -> Outcome {
    let space = SearchSpaceSpec::micro();
    let mut hits = 0;
    for seed in 0..10u64 {
        let mut rng = rng_from_seed(500 + seed);
        let table: std::collections::BTreeMap<Genotype, f64> =
            space.enumerate_all().unwrap().into_iter().map(|g| (g, rng.random())).collect();
        let argmax = table.iter().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0.clone();
        let out = evolve(&space, |g| Ok(table[g]), &EvolutionConfig::with_population(10, 20, seed)).map_err(|e| e.to_string())?;
        hits += usize::from(out.best.genotype == argmax);
    }
    check(hits >= 9, format!("argmax found in {hits}/10 seeds"))
}

/// Everything the trend criteria need from one root seed, derived the way
/// the command-line tool derives it with its default configuration.
struct Pipeline {
    seed: u64,
    space: SearchSpaceSpec,
    table: GroundTruthTable,
    net: SuperNet,
    eval: Batch,
}

impl Pipeline {
    fn build(seed: u64) -> flatnas::Result<Self> {
        let space = SearchSpaceSpec::micro();
        let data: Dataset = GeneratorSpec::default().with_seed(derive_seed(seed, "data")).generate()?;
        let oracle = OracleConfig { optimizer: OptimizerConfig::scratch(), seeds_per_arch: 3, base_seed: derive_seed(seed, "oracle") };
        let table = build_ground_truth_table(&space, "micro", &data, &oracle, 4)?;
        let mut net = SuperNet::new(space.clone(), data.input_dim(), data.classes(), &mut rng_from_seed(derive_seed(seed, "supernet-init")))?;
        net.train(&data, &OptimizerConfig::default(), &mut rng_from_seed(derive_seed(seed, "supernet-train")))?;
        Ok(Self { seed, space, table, net, eval: data.split_batch(Split::Val) })
    }

    fn genotypes(&self) -> Vec<Genotype> {
        self.table.entries.iter().map(|e| e.genotype.clone()).collect()
    }

    fn scores(&self, metric: &MetricSpec) -> flatnas::Result<Vec<flatnas::metrics::ScoreRecord>> {
        score_population(&self.net, &self.genotypes(), metric, &self.eval, derive_seed(self.seed, "flatness"), 4)
    }

    fn tau(&self, metric: &MetricSpec) -> flatnas::Result<f64> {
        let values: Vec<f64> = self.scores(metric)?.iter().map(|r| r.value).collect();
        let truth: Vec<f64> = self.table.entries.iter().map(|e| e.test_accuracy).collect();
        kendall_tau(&values, &truth)
    }
}

fn flatness(alpha: f64) -> MetricSpec {
    MetricSpec::Flatness { flatness: FlatnessConfig { alpha, ..FlatnessConfig::default() } }
}

fn alpha_trend(pipes: &[Pipeline]) -> Outcome {
    let mut wins = 0;
    let mut detail = Vec::new();
    for p in pipes {
        let (t0, t1) = (p.tau(&flatness(0.0)).map_err(|e| e.to_string())?, p.tau(&flatness(1.0)).map_err(|e| e.to_string())?);
        wins += usize::from(t1 > t0);
        detail.push(format!("seed {}: tau(a=0) {t0:.3}, tau(a=1) {t1:.3}", p.seed));
    }
    check(wins >= 2, format!("{wins}/3 seeds improve; {}", detail.join("; ")))
}

fn zero_gamma(p: &Pipeline) -> Outcome {
    let cfg = EvolutionConfig::with_population(10, 10, derive_seed(p.seed, "evolution"));
    let run = |metric: MetricSpec| -> Result<Vec<u8>, String> {
        let base = derive_seed(p.seed, "flatness");
        let out = evolve(&p.space, |g| score_genotype(&p.net, g, &metric, &p.eval, derived_seed(base, g)), &cfg)
            .map_err(|e| e.to_string())?;
        let mut buf = Vec::new();
        write_history(&out.history, &p.space, &mut buf).map_err(|e| e.to_string())?;
        Ok(buf)
    };
    let mut same = true;
    for base in [BaseMetric::Accuracy, BaseMetric::NegLoss, BaseMetric::Angle] {
        let combined = MetricSpec::Combined { base, gamma: 0.0, flatness: FlatnessConfig::default() };
        same &= run(MetricSpec::Base { base })? == run(combined)?;
    }
    check(same, format!("histories {} for accuracy, neg_loss and angle bases", if same { "identical" } else { "differ" }))
}

fn profiles(pipes: &[Pipeline]) -> Outcome {
    let sigma1 = FlatnessConfig::default().sigma1();
    let mut wins = 0;
    let mut detail = Vec::new();
    for p in pipes {
        let by_acc = |a: &&flatnas::bench::GroundTruthEntry, b: &&flatnas::bench::GroundTruthEntry| {
            a.test_accuracy.total_cmp(&b.test_accuracy).then_with(|| b.genotype.cmp(&a.genotype))
        };
        let best = &p.table.entries.iter().max_by(by_acc).unwrap().genotype;
        let worst = &p.table.entries.iter().min_by(by_acc).unwrap().genotype;
        let loss = |g: &Genotype| -> Result<f64, String> {
            let params = p.net.extract_subnet(g).map_err(|e| e.to_string())?;
            let mut rng = rng_from_seed(derive_seed(p.seed, "profile"));
            let prof = loss_curvature_profile(&params, g, &p.space, &p.eval, &[sigma1], 16, &mut rng).map_err(|e| e.to_string())?;
            Ok(prof.mean_losses[0])
        };
        let (lb, lw) = (loss(best)?, loss(worst)?);
        wins += usize::from(lb < lw);
        detail.push(format!("seed {}: best {lb:.4} vs worst {lw:.4}", p.seed));
    }
    check(wins >= 2, format!("{wins}/3 seeds; {}", detail.join("; ")))
}

fn angle_vs_flatness(pipes: &[Pipeline]) -> Outcome {
    let mut all_below = true;
    let mut detail = Vec::new();
    for p in pipes {
        let angle = p.scores(&MetricSpec::Base { base: BaseMetric::Angle }).map_err(|e| e.to_string())?;
        let flat = p.scores(&flatness(1.0)).map_err(|e| e.to_string())?;
        let tau = metric_rank_correlation(&angle, &flat).map_err(|e| e.to_string())?;
        all_below &= tau < 0.9;
        detail.push(format!("seed {}: {tau:.3}", p.seed));
    }
    check(all_below, detail.join("; "))
}

fn run_pipeline(dir: &Path) -> Result<(), String> {
    for step in [&["gen-data"][..], &["oracle", "--jobs", "4"], &["train-supernet"], &["search", "--jobs", "4"], &["tau", "--subset"]] {
        let out = Command::new(env!("CARGO_BIN_EXE_flatnas"))
            .args(step)
            .arg("--out")
            .arg(dir)
            .args(["--seed", "0"])
            .output()
            .map_err(|e| e.to_string())?;
        if !out.status.success() {
            return Err(format!("{step:?} failed: {}", String::from_utf8_lossy(&out.stderr)));
        }
    }
    Ok(())
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    run_pipeline(&a)?;
    run_pipeline(&b)?;
    let mut names: Vec<_> = std::fs::read_dir(&a).map_err(|e| e.to_string())?.map(|e| e.unwrap().file_name()).collect();
    names.sort();
    let mut differing = Vec::new();
    for name in &names {
        if std::fs::read(a.join(name)).ok() != std::fs::read(b.join(name)).ok() {
            differing.push(name.to_string_lossy().into_owned());
        }
    }
    let count_b = std::fs::read_dir(&b).map_err(|e| e.to_string())?.count();
    check(
        differing.is_empty() && count_b == names.len(),
        format!("{} files compared, differing: {differing:?}", names.len()),
    )
}

fn main() {
    let mut failed = 0;
    let mut report = |id: usize, name: &str, budget: Duration, run: &mut dyn FnMut() -> Outcome| {
        let start = Instant::now();
        let outcome = run();
        let took = start.elapsed();
        let (verdict, detail) = match outcome {
            Ok(d) if took <= budget => ("PASS", d),
            Ok(d) => ("FAIL", format!("{d} (over the {budget:?} budget)")),
            Err(d) => ("FAIL", d),
        };
        if verdict == "FAIL" {
            failed += 1;
        }
        println!("{verdict} criterion {id:>2} {name}: {detail} [{:.2}s]", took.as_secs_f64());
    };

    report(1, "flatness of the quadratic toy", Duration::from_secs(1), &mut quadratic_toy);
    report(2, "kendall tau vs brute force", Duration::from_secs(5), &mut kendall_oracle);
    report(3, "finite-difference gradients", Duration::from_secs(10), &mut gradients);
    report(4, "single-path locality", Duration::from_secs(10), &mut locality);
    report(5, "evolution finds the argmax", Duration::from_secs(5), &mut evolution_optimality);

    let start = Instant::now();
    let built: Result<Vec<Pipeline>, String> = (0..3).map(|s| Pipeline::build(s).map_err(|e| e.to_string())).collect();
    let setup = start.elapsed();
    println!("     shared setup for criteria 6-9 (3 oracle tables, 3 supernets) [{:.2}s]", setup.as_secs_f64());
    match built {
        Ok(pipes) => {
            let mut share = Some(setup);
            // the shared setup counts against the first criterion that uses it
            let mut budget = |limit: u64| Duration::from_secs(limit).saturating_sub(share.take().unwrap_or_default());
            report(6, "alpha trend", budget(600), &mut || alpha_trend(&pipes));
            report(7, "zero gamma matches the base metric", budget(60), &mut || zero_gamma(&pipes[0]));
            report(8, "best vs worst curvature profile", budget(120), &mut || profiles(&pipes));
            report(9, "angle vs flatness correlation", budget(300), &mut || angle_vs_flatness(&pipes));
        }
        Err(e) => {
            for (id, name) in [(6, "alpha trend"), (7, "zero gamma"), (8, "curvature profile"), (9, "angle vs flatness")] {
                report(id, name, Duration::MAX, &mut || Err(format!("pipeline setup failed: {e}")));
            }
        }
    }
    report(10, "end-to-end determinism", Duration::from_secs(900), &mut determinism);

    println!("{} of 10 criteria passed", 10 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
