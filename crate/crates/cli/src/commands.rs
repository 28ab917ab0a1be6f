use std::fs::File;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use flatnas::bench::{align_with_truth, build_table_file, kendall_tau_report, loss_curvature_profile, GroundTruthTable};
use flatnas::checkpoint::{load_supernet, supernet_checkpoint, Checkpoint};
use flatnas::data::{Dataset, Split};
use flatnas::evolution::{evolve_batched, write_history};
use flatnas::metrics::{derived_seed, score_genotype, score_population, FlatnessConfig, MetricSpec, ScoreRecord, SIGMA_GRIDS};
use flatnas::seed::rng_from_seed;
use flatnas::supernet::SuperNet;
use flatnas::{Genotype, SearchSpaceSpec};

use crate::config::RunConfig;
use crate::CliError;

fn digest_line(cfg: &RunConfig) -> String {
    format!("# config_digest={}\n", cfg.digest())
}

fn create(path: &Path) -> Result<File, CliError> {
    File::create(path).map_err(|e| CliError::runtime(format!("cannot write {}: {e}", path.display())))
}

fn open(path: &Path, what: &str, hint: &str) -> Result<File, CliError> {
    File::open(path).map_err(|e| CliError::runtime(format!("{what} {} unavailable ({e}); {hint}", path.display())))
}

fn load_data(cfg: &RunConfig, data: Option<PathBuf>) -> Result<Dataset, CliError> {
    let path = data.unwrap_or_else(|| cfg.path("data.csv"));
    let file = open(&path, "dataset", "run `flatnas gen-data` first")?;
    Ok(Dataset::read_csv(BufReader::new(file))?)
}

fn load_net(cfg: &RunConfig, checkpoint: Option<PathBuf>) -> Result<SuperNet, CliError> {
    let path = checkpoint.unwrap_or_else(|| cfg.path("supernet.ckpt"));
    let ckpt = Checkpoint::read(open(&path, "checkpoint", "run `flatnas train-supernet` first")?)?;
    let (net, preset, _) = load_supernet(&ckpt)?;
    if preset != cfg.space_preset {
        return Err(CliError::runtime(format!(
            "checkpoint was trained on preset {preset:?} but the config selects {:?}",
            cfg.space_preset
        )));
    }
    Ok(net)
}

fn load_truth(cfg: &RunConfig, space: &SearchSpaceSpec, truth: Option<PathBuf>) -> Result<GroundTruthTable, CliError> {
    let path = truth.unwrap_or_else(|| cfg.path("oracle.csv"));
    let file = File::open(&path)
        .map_err(|_| CliError::runtime(format!("missing oracle table {}; run `flatnas oracle` first", path.display())))?;
    let table = GroundTruthTable::read_csv(space, file)?;
    if !table.is_complete() {
        return Err(CliError::runtime(format!(
            "oracle table {} is incomplete ({} entries); rerun `flatnas oracle` to finish it",
            path.display(),
            table.entries.len()
        )));
    }
    Ok(table)
}

pub fn gen_data(cfg: &RunConfig, data: Option<PathBuf>) -> Result<(), CliError> {
    let ds = cfg.dataset.generate()?;
    let path = data.unwrap_or_else(|| cfg.path("data.csv"));
    let mut f = create(&path)?;
    ds.write_csv(&mut f)?;
    f.write_all(digest_line(cfg).as_bytes())?;
    println!("dataset_digest {}", ds.digest());
    println!(
        "samples {} (train {}, val {}, test {}) -> {}",
        ds.len(),
        ds.split_indices(Split::Train).len(),
        ds.split_indices(Split::Val).len(),
        ds.split_indices(Split::Test).len(),
        path.display()
    );
    Ok(())
}

pub fn train_supernet(cfg: &RunConfig, data: Option<PathBuf>, checkpoint: Option<PathBuf>) -> Result<(), CliError> {
    let ds = load_data(cfg, data)?;
    let space = cfg.space()?;
    let mut net = SuperNet::new(space, ds.input_dim(), ds.classes(), &mut rng_from_seed(cfg.stream("supernet-init")))?;
    let report = net.train(&ds, &cfg.optimizer, &mut rng_from_seed(cfg.stream("supernet-train")))?;
    let mut log = create(&cfg.path("train_log.csv"))?;
    writeln!(log, "epoch,mean_loss")?;
    for (epoch, loss) in report.epoch_losses.iter().enumerate() {
        println!("epoch {} mean_sampled_loss {loss}", epoch + 1);
        writeln!(log, "{},{loss}", epoch + 1)?;
    }
    log.write_all(digest_line(cfg).as_bytes())?;
    let ckpt = supernet_checkpoint(
        &net,
        &cfg.space_preset,
        cfg.seed,
        &[("config_digest", cfg.digest()), ("dataset_digest", ds.digest())],
    );
    let path = checkpoint.unwrap_or_else(|| cfg.path("supernet.ckpt"));
    ckpt.write(create(&path)?)?;
    println!("checkpoint {}", path.display());
    Ok(())
}

/// Scores a batch of genotypes, `jobs` at a time.
fn batch_scorer<'a>(
    net: &'a SuperNet,
    metric: &'a MetricSpec,
    eval: &'a flatnas::nn::Batch,
    base_seed: u64,
    jobs: usize,
    log: &'a mut Vec<ScoreRecord>,
) -> impl FnMut(&[Genotype]) -> Vec<flatnas::Result<f64>> + 'a {
    let name = metric.name();
    let digest = metric.digest();
    move |gs: &[Genotype]| {
        let chunk = gs.len().div_ceil(jobs.max(1)).max(1);
        let results: Vec<flatnas::Result<f64>> = std::thread::scope(|s| {
            let handles: Vec<_> = gs
                .chunks(chunk)
                .map(|part| {
                    s.spawn(move || {
                        part.iter()
                            .map(|g| score_genotype(net, g, metric, eval, derived_seed(base_seed, g)))
                            .collect::<Vec<_>>()
                    })
                })
                .collect();
            handles.into_iter().flat_map(|h| h.join().expect("scoring thread panicked")).collect()
        });
        for (g, r) in gs.iter().zip(&results) {
            if let Ok(value) = r {
                log.push(ScoreRecord {
                    genotype: g.clone(),
                    metric_name: name.clone(),
                    value: *value,
                    seed: derived_seed(base_seed, g),
                    config_digest: digest.clone(),
                });
            }
        }
        results
    }
}

pub fn search(cfg: &RunConfig, data: Option<PathBuf>, checkpoint: Option<PathBuf>, jobs: usize) -> Result<(), CliError> {
    let ds = load_data(cfg, data)?;
    let net = load_net(cfg, checkpoint)?;
    let metric = cfg.metric_spec()?;
    let eval = ds.split_batch(Split::Val);
    let mut records = Vec::new();
    let outcome = {
        let scorer = batch_scorer(&net, &metric, &eval, cfg.stream("flatness"), jobs, &mut records);
        evolve_batched(net.space(), scorer, &cfg.evolution)?
    };
    let space = net.space();
    for (g, why) in &outcome.failures {
        eprintln!("warning: discarded {}: {why}", space.encode(g));
    }
    let mut hist = create(&cfg.path("history.jsonl"))?;
    hist.write_all(digest_line(cfg).as_bytes())?;
    write_history(&outcome.history, space, &mut hist)?;

    let mut scores = create(&cfg.path("scores.csv"))?;
    ScoreRecord::write_csv(&records, space, &mut scores)?;

    let best = space.encode(&outcome.best.genotype);
    let mut f = create(&cfg.path("best.txt"))?;
    writeln!(f, "genotype {best}")?;
    writeln!(f, "score {}", outcome.best.score)?;
    writeln!(f, "metric {}", metric.name())?;
    writeln!(f, "config_digest {}", cfg.digest())?;
    println!("scored {} architectures over {} iterations", records.len(), outcome.history.len());
    println!("best {best} score {}", outcome.best.score);
    Ok(())
}

fn sample_genotypes(cfg: &RunConfig, space: &SearchSpaceSpec) -> Result<Vec<Genotype>, CliError> {
    match cfg.oracle.sample {
        None => Ok(space.enumerate_all()?),
        Some(n) => {
            let total = space.genotype_count().unwrap_or(u128::MAX);
            if n as u128 > total {
                return Err(CliError::usage(format!("oracle.sample {n} exceeds the {total} architectures of the space")));
            }
            let mut rng = rng_from_seed(cfg.stream("oracle-sample"));
            let mut picked = std::collections::BTreeSet::new();
            while picked.len() < n {
                picked.insert(space.random_genotype(&mut rng));
            }
            Ok(picked.into_iter().collect())
        }
    }
}

pub fn oracle(cfg: &RunConfig, data: Option<PathBuf>, truth: Option<PathBuf>, limit: Option<usize>, jobs: usize) -> Result<(), CliError> {
    let ds = load_data(cfg, data)?;
    let space = cfg.space()?;
    let genotypes = sample_genotypes(cfg, &space)?;
    let path = truth.unwrap_or_else(|| cfg.path("oracle.csv"));
    let mut progress = |done: usize, total: usize| eprintln!("oracle {done}/{total}");
    let table = build_table_file(&path, &space, &cfg.space_preset, &ds, &cfg.oracle_config(), &genotypes, jobs, limit, &mut progress)?;
    match table {
        Some(t) => {
            let best = t
                .entries
                .iter()
                .max_by(|a, b| a.test_accuracy.total_cmp(&b.test_accuracy).then_with(|| b.genotype.cmp(&a.genotype)))
                .expect("table is non-empty");
            println!("oracle complete: {} entries, training digest {}", t.entries.len(), t.training_config_digest);
            println!("top {} test_accuracy {}", space.encode(&best.genotype), best.test_accuracy);
        }
        None => println!("oracle partial: rerun to resume ({})", path.display()),
    }
    Ok(())
}

pub fn tau(cfg: &RunConfig, scores: Option<PathBuf>, truth: Option<PathBuf>, subset: bool) -> Result<(), CliError> {
    let space = cfg.space()?;
    let table = load_truth(cfg, &space, truth)?;
    let path = scores.unwrap_or_else(|| cfg.path("scores.csv"));
    let records = ScoreRecord::read_csv(&space, open(&path, "score file", "run `flatnas search` first")?)?;
    let (s, t) = align_with_truth(&records, &table, &space, subset)?;
    let r = kendall_tau_report(&s, &t)?;
    println!("n {}", r.n);
    println!("tau_b {}", r.tau_b);
    println!("tau_a {}", r.tau_a);
    println!("ties_scores {} ties_truth {}", r.ties_first, r.ties_second);
    let mut f = create(&cfg.path("tau.csv"))?;
    writeln!(f, "n,tau_b,tau_a,ties_scores,ties_truth")?;
    writeln!(f, "{},{},{},{},{}", r.n, r.tau_b, r.tau_a, r.ties_first, r.ties_second)?;
    f.write_all(digest_line(cfg).as_bytes())?;
    Ok(())
}

fn read_best(cfg: &RunConfig) -> Result<String, CliError> {
    let text = std::fs::read_to_string(cfg.path("best.txt"))
        .map_err(|e| CliError::runtime(format!("no best.txt ({e}); run `flatnas search` first")))?;
    text.lines()
        .find_map(|l| l.strip_prefix("genotype "))
        .map(str::to_string)
        .ok_or_else(|| CliError::runtime("best.txt has no genotype line"))
}

pub fn profile(
    cfg: &RunConfig,
    genotype: &str,
    data: Option<PathBuf>,
    checkpoint: Option<PathBuf>,
    sigmas: Option<Vec<f64>>,
    replicates: Option<usize>,
) -> Result<(), CliError> {
    let ds = load_data(cfg, data)?;
    let net = load_net(cfg, checkpoint)?;
    let text = if genotype == "best" { read_best(cfg)? } else { genotype.to_string() };
    let g = net.space().decode(&text)?;
    let sigmas = sigmas.unwrap_or_else(|| cfg.profile.sigmas.clone());
    let replicates = replicates.unwrap_or(cfg.profile.replicates);
    let params = net.extract_subnet(&g)?;
    let profile = loss_curvature_profile(
        &params,
        &g,
        net.space(),
        &ds.split_batch(Split::Val),
        &sigmas,
        replicates,
        &mut rng_from_seed(cfg.stream("profile")),
    )?;
    let mut f = create(&cfg.path("profile.csv"))?;
    f.write_all(profile.to_csv_string().as_bytes())?;
    writeln!(f, "# genotype={text} replicates={replicates}")?;
    f.write_all(digest_line(cfg).as_bytes())?;
    for (s, l) in profile.sigmas.iter().zip(&profile.mean_losses) {
        println!("sigma {s} mean_loss {l}");
    }
    Ok(())
}

fn parse_grid(v: &str) -> Result<Vec<f64>, CliError> {
    if let Some((_, grid)) = SIGMA_GRIDS.iter().find(|(name, _)| *name == v) {
        return Ok(grid.to_vec());
    }
    v.split(':')
        .map(|x| x.trim().parse::<f64>().map_err(|_| CliError::usage(format!("bad sigma grid {v:?}"))))
        .collect()
}

#[allow(clippy::too_many_arguments)]
pub fn sweep(
    cfg: &RunConfig,
    param: &str,
    values: &str,
    data: Option<PathBuf>,
    checkpoint: Option<PathBuf>,
    truth: Option<PathBuf>,
    jobs: usize,
) -> Result<(), CliError> {
    let items: Vec<&str> = values.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
    if items.is_empty() {
        return Err(CliError::usage("--values is empty"));
    }
    let uses_flatness = matches!(cfg.metric.name.as_str(), "flatness" | "combined");
    let mut variants: Vec<(String, MetricSpec)> = Vec::new();
    for v in &items {
        let num = || v.parse::<f64>().map_err(|_| CliError::usage(format!("bad value {v:?}")));
        let spec = match param {
            "alpha" | "sigma_grid" | "sigma-grid" if !uses_flatness => {
                return Err(CliError::usage(format!("a {param} sweep needs metric flatness or combined")));
            }
            "alpha" => cfg.metric_spec_with(&FlatnessConfig { alpha: num()?, ..cfg.flatness.clone() }, cfg.metric.gamma)?,
            "sigma_grid" | "sigma-grid" => {
                cfg.metric_spec_with(&FlatnessConfig { sigmas: parse_grid(v)?, ..cfg.flatness.clone() }, cfg.metric.gamma)?
            }
            "gamma" if cfg.metric.name != "combined" => {
                return Err(CliError::usage("a gamma sweep needs --metric combined"));
            }
            "gamma" => cfg.metric_spec_with(&cfg.flatness, num()?)?,
            other => return Err(CliError::usage(format!("unknown sweep parameter {other:?} (alpha, gamma, sigma_grid)"))),
        };
        variants.push((v.to_string(), spec));
    }
    let ds = load_data(cfg, data)?;
    let net = load_net(cfg, checkpoint)?;
    let table = load_truth(cfg, net.space(), truth)?;
    let genotypes: Vec<Genotype> = table.entries.iter().map(|e| e.genotype.clone()).collect();
    let eval = ds.split_batch(Split::Val);
    let path = cfg.path(&format!("sweep_{}.csv", param.replace('-', "_")));
    let mut w = csv::Writer::from_writer(create(&path)?);
    w.write_record(["parameter", "value", "metric", "n", "tau_b", "tau_a"]).map_err(CliError::runtime)?;
    for (value, spec) in &variants {
        let records = score_population(&net, &genotypes, spec, &eval, cfg.stream("flatness"), jobs)?;
        let (s, t) = align_with_truth(&records, &table, net.space(), false)?;
        let r = kendall_tau_report(&s, &t)?;
        println!("{param}={value} tau_b {} tau_a {}", r.tau_b, r.tau_a);
        w.write_record([param, value, &spec.name(), &r.n.to_string(), &r.tau_b.to_string(), &r.tau_a.to_string()])
            .map_err(CliError::runtime)?;
    }
    let mut f = w.into_inner().map_err(|e| CliError::runtime(e.to_string()))?;
    f.write_all(digest_line(cfg).as_bytes())?;
    Ok(())
}
