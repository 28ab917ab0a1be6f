use flatnas::bench::{kendall_tau, kendall_tau_report, metric_rank_correlation};
use flatnas::metrics::ScoreRecord;
use flatnas::seed::rng_from_seed;
use flatnas::{Error, SearchSpaceSpec};
use proptest::prelude::*;
use rand::Rng;

/// O(n^2) pair counting straight from the definition.
fn brute_tau_b(s: &[f64], g: &[f64]) -> Option<f64> {
    let (mut c, mut d, mut ts, mut tg) = (0u64, 0u64, 0u64, 0u64);
    for i in 0..s.len() {
        for j in i + 1..s.len() {
            let ds = s[i].partial_cmp(&s[j]).unwrap();
            let dg = g[i].partial_cmp(&g[j]).unwrap();
            use std::cmp::Ordering::Equal;
            match (ds, dg) {
                (Equal, Equal) => {}
                (Equal, _) => ts += 1,
                (_, Equal) => tg += 1,
                (a, b) if a == b => c += 1,
                _ => d += 1,
            }
        }
    }
    let denom = (c + d + ts) * (c + d + tg);
    (denom > 0).then(|| (c as i64 - d as i64) as f64 / (denom as f64).sqrt())
}

fn random_vec(rng: &mut impl Rng, n: usize, tied: bool) -> Vec<f64> {
    (0..n)
        .map(|_| if tied { rng.random_range(0..4) as f64 } else { rng.random_range(-1.0..1.0) })
        .collect()
}

#[test]
fn matches_brute_force_exactly() {
    let mut rng = rng_from_seed(2024);
    for case in 0..100 {
        let n = rng.random_range(2..=50);
        let tied = case % 2 == 0;
        let s = random_vec(&mut rng, n, tied);
        let g = random_vec(&mut rng, n, tied && case % 4 == 0);
        match (kendall_tau(&s, &g), brute_tau_b(&s, &g)) {
            (Ok(fast), Some(slow)) => assert_eq!(fast, slow, "case {case}: {s:?} {g:?}"),
            (Err(Error::Undefined(_)), None) => {}
            (a, b) => panic!("case {case}: {a:?} vs {b:?}"),
        }
    }
}

#[test]
fn identity_and_reversal() {
    let mut rng = rng_from_seed(5);
    for n in [2, 3, 17, 50] {
        let s = random_vec(&mut rng, n, false);
        let rev: Vec<f64> = s.iter().map(|v| -v).collect();
        assert_eq!(kendall_tau(&s, &s).unwrap(), 1.0);
        assert_eq!(kendall_tau(&s, &rev).unwrap(), -1.0);
    }
}

#[test]
fn worked_example() {
    let t = kendall_tau(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0]).unwrap();
    assert!((t - 4.0 / 6.0).abs() < 1e-15);
}

#[test]
fn tau_a_equals_tau_b_without_ties() {
    let r = kendall_tau_report(&[3.0, 1.0, 4.0, 1.5, 5.0], &[2.0, 7.0, 1.0, 8.0, 2.8]).unwrap();
    assert_eq!(r.tau_a, r.tau_b);
}

fn records(space: &SearchSpaceSpec, values: &[f64]) -> Vec<ScoreRecord> {
    space
        .enumerate_all()
        .unwrap()
        .into_iter()
        .zip(values)
        .map(|(genotype, &value)| ScoreRecord { genotype, metric_name: "m".into(), value, seed: 0, config_digest: String::new() })
        .collect()
}

#[test]
fn rank_correlation_aligns_by_genotype() {
    let space = SearchSpaceSpec::micro();
    let mut rng = rng_from_seed(9);
    let va: Vec<f64> = (0..27).map(|_| rng.random()).collect();
    let vb: Vec<f64> = (0..27).map(|_| rng.random()).collect();
    let a = records(&space, &va);
    let b = records(&space, &vb);
    let neg = records(&space, &va.iter().map(|v| -v).collect::<Vec<_>>());
    assert_eq!(metric_rank_correlation(&a, &a).unwrap(), 1.0);
    assert_eq!(metric_rank_correlation(&a, &neg).unwrap(), -1.0);

    let mut shuffled = b.clone();
    shuffled.reverse();
    assert_eq!(metric_rank_correlation(&a, &shuffled).unwrap(), kendall_tau(&va, &vb).unwrap());

    let short = &b[..26];
    assert!(matches!(metric_rank_correlation(&a, short), Err(Error::GenotypeSetMismatch(_))));
    let mut dup = b.clone();
    dup[0].genotype = dup[1].genotype.clone();
    assert!(matches!(metric_rank_correlation(&a, &dup), Err(Error::GenotypeSetMismatch(_))));
}

fn distinct(n: std::ops::Range<usize>) -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    n.prop_flat_map(|len| {
        (
            prop::collection::hash_set(-1000i32..1000, len),
            prop::collection::hash_set(-1000i32..1000, len),
        )
    })
    .prop_map(|(a, b)| {
        let a: Vec<f64> = a.into_iter().map(f64::from).collect();
        let b: Vec<f64> = b.into_iter().map(f64::from).collect();
        let n = a.len().min(b.len());
        (a[..n].to_vec(), b[..n].to_vec())
    })
    .prop_filter("need two pairs", |(a, _)| a.len() >= 2)
}

proptest! {
    #[test]
    fn bounded_and_symmetric(s in prop::collection::vec(0u8..6, 2..40), g in prop::collection::vec(0u8..6, 2..40)) {
        let n = s.len().min(g.len());
        let s: Vec<f64> = s[..n].iter().map(|&v| v as f64).collect();
        let g: Vec<f64> = g[..n].iter().map(|&v| v as f64).collect();
        if let Ok(t) = kendall_tau(&s, &g) {
            prop_assert!((-1.0..=1.0).contains(&t));
            prop_assert_eq!(t, kendall_tau(&g, &s).unwrap());
        }
    }

    #[test]
    fn reversing_ranks_negates((s, g) in distinct(2..40)) {
        let reversed: Vec<f64> = s.iter().map(|v| -v).collect();
        let t = kendall_tau(&s, &g).unwrap();
        prop_assert_eq!(t, -kendall_tau(&reversed, &g).unwrap());
    }

    #[test]
    fn monotone_transforms_do_not_matter((s, g) in distinct(2..40)) {
        let t = kendall_tau(&s, &g).unwrap();
        let warped: Vec<f64> = s.iter().map(|v| (v / 100.0).exp() * 3.0 + 1.0).collect();
        prop_assert_eq!(t, kendall_tau(&warped, &g).unwrap());
    }
}
