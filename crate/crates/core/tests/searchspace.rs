use flatnas::searchspace::Op;
use flatnas::seed::rng_from_seed;
use flatnas::{Genotype, SearchSpaceSpec};
use proptest::prelude::*;
use std::collections::BTreeSet;

fn spaces() -> Vec<SearchSpaceSpec> {
    vec![
        SearchSpaceSpec::micro(),
        SearchSpaceSpec::nano201(),
        SearchSpaceSpec::new(2, vec![(0, 1)], vec![Op::Skip], 1, 2).unwrap(),
        SearchSpaceSpec::new(3, vec![(0, 1), (1, 2)], vec![Op::Scale, Op::Linear], 2, 4).unwrap(),
    ]
}

#[test]
fn enumeration_counts_and_order() {
    for space in spaces() {
        let all = space.enumerate_all().unwrap();
        assert_eq!(all.len() as u128, space.genotype_count().unwrap());
        assert!(all.windows(2).all(|w| w[0] < w[1]));
        let distinct: BTreeSet<&Genotype> = all.iter().collect();
        assert_eq!(distinct.len(), all.len());
    }
    assert_eq!(SearchSpaceSpec::nano201().enumerate_all().unwrap().len(), 15625);
}

#[test]
fn crossover_allele_frequencies_are_balanced() {
    let space = SearchSpaceSpec::nano201();
    let a = space.genotype(vec![0, 1, 2, 3, 4, 0]).unwrap();
    let b = space.genotype(vec![4, 3, 2, 1, 0, 1]).unwrap();
    let mut rng = rng_from_seed(99);
    let mut from_a = [0usize; 6];
    for _ in 0..10_000 {
        let child = space.crossover(&a, &b, &mut rng).unwrap();
        for i in 0..6 {
            assert!(child.op_indices()[i] == a.op_indices()[i] || child.op_indices()[i] == b.op_indices()[i]);
            if child.op_indices()[i] == a.op_indices()[i] {
                from_a[i] += 1;
            }
        }
    }
    for (i, &n) in from_a.iter().enumerate() {
        if a.op_indices()[i] != b.op_indices()[i] {
            let f = n as f64 / 10_000.0;
            assert!((0.45..=0.55).contains(&f), "coordinate {i}: {f}");
        }
    }
}

#[test]
fn dot_export_structure() {
    let space = SearchSpaceSpec::nano201();
    let g = space.genotype(vec![0, 1, 2, 3, 4, 1]).unwrap();
    let dot = space.export_dot(&g).unwrap();
    assert_eq!(dot, space.export_dot(&g).unwrap());
    assert_eq!(dot.matches(" -> ").count(), 6);
    for n in 0..4 {
        assert!(dot.contains(&format!("  {n} [label=\"{n}\"];")));
    }
    assert!(!dot.contains("  4 [label"));
}

fn space_and_genotype() -> impl Strategy<Value = (usize, Vec<usize>)> {
    (0usize..4).prop_flat_map(|which| {
        let space = &spaces()[which];
        let (e, k) = (space.edge_count(), space.ops().len());
        (Just(which), prop::collection::vec(0..k, e))
    })
}

proptest! {
    #[test]
    fn encode_decode_round_trip((which, ops) in space_and_genotype()) {
        let space = &spaces()[which];
        let g = space.genotype(ops).unwrap();
        prop_assert_eq!(space.decode(&space.encode(&g)).unwrap(), g);
    }

    #[test]
    fn mutation_is_valid_and_moves_only_when_firing((which, ops) in space_and_genotype(), seed in any::<u64>(), rate in 0.0f64..=1.0) {
        let space = &spaces()[which];
        let g = space.genotype(ops).unwrap();
        let child = space.mutate(&g, rate, &mut rng_from_seed(seed)).unwrap();
        prop_assert!(space.validate(&child).is_ok());
        prop_assert_eq!(space.mutate(&g, 0.0, &mut rng_from_seed(seed)).unwrap(), g.clone());
        if space.ops().len() >= 2 {
            let forced = space.mutate(&g, 1.0, &mut rng_from_seed(seed)).unwrap();
            for (x, y) in forced.op_indices().iter().zip(g.op_indices()) {
                prop_assert_ne!(x, y);
            }
        }
    }

    #[test]
    fn offspring_chains_stay_valid((which, ops) in space_and_genotype(), seed in any::<u64>()) {
        let space = &spaces()[which];
        let mut rng = rng_from_seed(seed);
        let mut g = space.genotype(ops).unwrap();
        for _ in 0..20 {
            let other = space.random_genotype(&mut rng);
            g = space.crossover(&g, &other, &mut rng).unwrap();
            g = space.mutate(&g, 0.3, &mut rng).unwrap();
            prop_assert!(space.validate(&g).is_ok());
        }
    }
}
