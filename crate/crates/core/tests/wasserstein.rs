use flowrate::points::Points;
use flowrate::rng::substream;
use flowrate::wasserstein::{
    brute_force_w_p, sinkhorn_w_p, w_p_1d, w_p_exact, EmpiricalMeasure,
};
use proptest::prelude::*;
use rand::Rng as _;

fn cloud(seed: u64, n: usize, d: usize) -> Points {
    let mut rng = substream(seed, 0);
    Points::new(d, (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn uniform(p: Points) -> EmpiricalMeasure {
    EmpiricalMeasure::uniform(p).unwrap()
}

#[test]
fn metric_axioms_on_random_triples() {
    for d in [1, 2] {
        for seed in 0..4u64 {
            let (a, b, c) = (cloud(3 * seed, 128, d), cloud(3 * seed + 1, 128, d), cloud(3 * seed + 2, 128, d));
            for p in [1.0, 2.0] {
                let w = |x: &Points, y: &Points| w_p_exact(&uniform(x.clone()), &uniform(y.clone()), p).unwrap();
                assert_eq!(w(&a, &b), w(&b, &a));
                assert_eq!(w(&a, &a), 0.0);
                assert!(w(&a, &c) <= w(&a, &b) + w(&b, &c) + 1e-9);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn one_d_coupling_is_optimal(seed in any::<u64>(), n in 2usize..40) {
        let (a, b) = (uniform(cloud(seed, n, 1)), uniform(cloud(seed ^ 0xabc, n, 1)));
        for p in [1.0, 2.0] {
            let (x, y) = (w_p_1d(&a, &b, p).unwrap(), w_p_exact(&a, &b, p).unwrap());
            prop_assert!((x - y).abs() < 1e-10, "p={}: {} vs {}", p, x, y);
        }
    }

    #[test]
    fn w1_is_at_most_w2(seed in any::<u64>(), n in 2usize..60, d in 1usize..4) {
        let (a, b) = (uniform(cloud(seed, n, d)), uniform(cloud(seed ^ 0x55, n, d)));
        prop_assert!(w_p_exact(&a, &b, 1.0).unwrap() <= w_p_exact(&a, &b, 2.0).unwrap() + 1e-12);
    }

    #[test]
    fn exact_solver_matches_enumeration(seed in any::<u64>(), n in 1usize..7) {
        let (a, b) = (cloud(seed, n, 2), cloud(seed ^ 0x77, n, 2));
        let exact = w_p_exact(&uniform(a.clone()), &uniform(b.clone()), 2.0).unwrap();
        prop_assert_eq!(exact, brute_force_w_p(&a, &b, 2.0).unwrap());
    }
}

#[test]
fn debiased_sinkhorn_tracks_the_exact_value() {
    let (a, b) = (uniform(cloud(1, 64, 2)), uniform(cloud(2, 64, 2)));
    let exact = w_p_exact(&a, &b, 2.0).unwrap();
    let s = sinkhorn_w_p(&a, &b, 2.0, 1e-2, 5000).unwrap();
    assert!(s.converged, "{s:?}");
    assert!((s.value - exact).abs() < 0.05 * exact, "{} vs {exact}", s.value);
}

#[test]
fn exact_solver_agrees_with_sorting_on_large_lines() {
    for seed in 0..3u64 {
        let (a, b) = (uniform(cloud(seed, 1000, 1)), uniform(cloud(seed + 10, 1000, 1)));
        for p in [1.0, 2.0] {
            let (x, y) = (w_p_1d(&a, &b, p).unwrap(), w_p_exact(&a, &b, p).unwrap());
            assert!((x - y).abs() < 1e-10, "p={p}: {x} vs {y}");
        }
    }
}
