mod common;

use flatnas::data::GeneratorSpec;
use flatnas::nn::{backward_step, block_names, forward, init_params, OptimizerConfig, SgdState};
use flatnas::seed::rng_from_seed;
use flatnas::supernet::{sample_uniform_path, SuperNet};
use flatnas::SearchSpaceSpec;

#[test]
fn forward_matches_reference_evaluation() {
    let space = SearchSpaceSpec::nano201().with_channels(4).unwrap().with_cells(2).unwrap();
    let mut rng = rng_from_seed(11);
    for i in 0..30 {
        let g = space.random_genotype(&mut rng);
        let p = init_params(&space, Some(&g), 5, 3, &mut rng).unwrap();
        let batch = common::random_batch(7, 5, 3, i);
        let ours = forward(&p, &g, &space, &batch).unwrap().loss;
        let theirs = common::reference_loss(&p, &g, &space, &batch);
        assert!((ours - theirs).abs() <= 1e-12 * theirs.abs().max(1.0), "{ours} vs {theirs}");
    }
}

#[test]
fn all_zeroize_network_predicts_uniformly() {
    let space = SearchSpaceSpec::micro();
    let g = space.genotype(vec![0, 0, 0]).unwrap();
    let p = init_params(&space, Some(&g), 4, 3, &mut rng_from_seed(0)).unwrap();
    let loss = forward(&p, &g, &space, &common::random_batch(9, 4, 3, 1)).unwrap().loss;
    assert!((loss - 3f64.ln()).abs() < 1e-12);
}

#[test]
fn non_sampled_blocks_are_untouched_by_a_step() {
    let space = SearchSpaceSpec::nano201().with_channels(3).unwrap().with_cells(2).unwrap();
    let mut rng = rng_from_seed(3);
    let mut params = init_params(&space, None, 4, 3, &mut rng).unwrap();
    let cfg = OptimizerConfig::default();
    let mut state = SgdState::new();
    let mut violations = 0;
    for step in 0..100u64 {
        let path = sample_uniform_path(&space, &mut rng);
        let before = params.clone();
        let batch = common::random_batch(8, 4, 3, step);
        backward_step(&mut params, &path, &space, &batch, 0.05, &cfg, &mut state).unwrap();
        for cell in 0..space.cells_per_network() {
            for e in 0..space.edge_count() {
                for &op in space.ops() {
                    if op == space.op_at(&path, e) {
                        continue;
                    }
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
    assert_eq!(violations, 0);
}

#[test]
fn supernet_training_is_seeded_and_extraction_shares_weights() {
    let data = GeneratorSpec::Spirals { classes: 3, per_class: 60, noise_std: 0.1, lift_dim: 6, seed: 2 }
        .generate()
        .unwrap();
    let space = SearchSpaceSpec::micro().with_channels(6).unwrap();
    let cfg = OptimizerConfig { epochs: 3, ..OptimizerConfig::default() };
    let run = || {
        let mut net = SuperNet::new(space.clone(), data.input_dim(), data.classes(), &mut rng_from_seed(1)).unwrap();
        let report = net.train(&data, &cfg, &mut rng_from_seed(2)).unwrap();
        (net, report)
    };
    let (net, report) = run();
    let (again, report2) = run();
    assert_eq!(net.shared_params().to_le_bytes(), again.shared_params().to_le_bytes());
    assert_eq!(report, report2);
    assert_eq!(report.epoch_losses.len(), 3);
    assert_eq!(net.epoch(), 3);

    let g = space.genotype(vec![2, 1, 2]).unwrap();
    let sub = net.extract_subnet(&g).unwrap();
    for e in sub.entries() {
        assert_eq!(e.values, net.shared_params().get(&e.name).unwrap().values);
    }
    let init = net.extract_initial_subnet(&g).unwrap();
    assert!(init.same_structure(&sub));
    assert_ne!(init, sub);
}

#[test]
fn zero_epochs_keeps_initial_snapshot() {
    let data = GeneratorSpec::Blobs { classes: 2, per_class: 20, spread: 0.5, input_dim: 3, seed: 0 }
        .generate()
        .unwrap();
    let mut net = SuperNet::new(SearchSpaceSpec::micro(), 3, 2, &mut rng_from_seed(4)).unwrap();
    let cfg = OptimizerConfig { epochs: 0, ..OptimizerConfig::default() };
    let report = net.train(&data, &cfg, &mut rng_from_seed(0)).unwrap();
    assert!(report.epoch_losses.is_empty());
    assert_eq!(net.shared_params(), net.initial_snapshot());
}
