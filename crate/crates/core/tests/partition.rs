use flowrate::field::{ConstantField, VelocityField};
use flowrate::partition::{fixed_partition, gronwall_bound, interval_seed, Piecewise};
use proptest::prelude::*;

proptest! {
    #[test]
    fn knots_double_and_count_is_bounded(
        t0 in 1e-6..0.4f64,
        big_n in 1usize..5000,
        kappa in 0.5..2.0f64,
        s in 0.5..3.0f64,
        d in 1usize..4,
    ) {
        let delta = 0.5 / kappa;
        let p = fixed_partition(t0, big_n, s, d, kappa, delta, 64).unwrap();
        let k = p.intervals();
        for j in 1..k {
            prop_assert_eq!(p.knots[j] / p.knots[j - 1], 2.0);
        }
        prop_assert_eq!(*p.knots.last().unwrap(), 1.0);
        prop_assert!(p.knots[k] > p.knots[k - 1]);
        prop_assert!(k as f64 <= (1.0 / t0).log2().ceil() + 1.0);
    }

    #[test]
    fn budgets_shrink_after_t_star(
        t0 in 1e-6..0.1f64,
        big_n in 1usize..100_000,
        kappa in 0.5..2.0f64,
        d in 1usize..4,
    ) {
        let p = fixed_partition(t0, big_n, 1.0, d, kappa, 0.1 / kappa, 64).unwrap();
        prop_assert!(p.basis_counts.iter().all(|&c| c >= 1 && c <= p.n_basis));
        for j in p.j_star..p.basis_counts.len() {
            if j >= 1 && j > p.j_star {
                prop_assert!(p.basis_counts[j] <= p.basis_counts[j - 1]);
            }
        }
        for (j, &c) in p.basis_counts.iter().enumerate() {
            if j < p.j_star {
                prop_assert_eq!(c, p.n_basis);
            }
        }
    }
}

#[test]
fn late_budgets_grow_with_n() {
    let (t0, kappa, delta, d) = (1e-3, 0.5, 0.1, 1);
    let mut prev = 0;
    for exp in 4..20 {
        let big_n = 1usize << exp;
        let p = fixed_partition(t0, big_n, 1.0, d, kappa, delta, 64).unwrap();
        let last = *p.basis_counts.last().unwrap();
        assert!(last >= prev);
        prev = last;
    }
    // t_{K−1}^{−dκ} N^{δκ} grows without bound in N
    let huge = fixed_partition(t0, 1usize << 60, 1.0, d, kappa, delta, 64).unwrap();
    assert!(*huge.basis_counts.last().unwrap() > prev);
}

#[test]
fn stitched_field_dispatches_inside_intervals() {
    let p = fixed_partition(1e-3, 64, 1.0, 1, 0.5, 0.1, 64).unwrap();
    let parts: Vec<ConstantField> = (0..p.intervals()).map(|j| ConstantField { value: vec![j as f64] }).collect();
    let field = Piecewise::new(p.knots.clone(), parts).unwrap();
    let mut out = [0.0];
    for i in 0..1000 {
        let u = (i as f64 + 0.5) / 1000.0;
        let t = 1e-3f64.powf(1.0 - u);
        let j = p.knots.windows(2).position(|w| w[0] <= t && t < w[1]).unwrap();
        field.velocity(&[0.0], t, &mut out);
        assert_eq!(out[0], j as f64, "t={t}");
    }
}

#[test]
fn interior_gronwall_factors_are_two_to_c() {
    let p = fixed_partition(1e-3, 64, 1.0, 1, 0.5, 0.1, 64).unwrap();
    let f = p.gronwall_factors(1.5);
    for (j, v) in f.iter().enumerate().take(p.intervals() - 1) {
        assert!((v - gronwall_bound(1.5)).abs() < 1e-12, "interval {j}: {v}");
    }
    assert!(*f.last().unwrap() <= gronwall_bound(1.5));
}

#[test]
fn interval_seeds_are_distinct() {
    let seeds: Vec<u64> = (0..32).map(|j| interval_seed(7, j)).collect();
    assert_eq!(seeds[0], 7);
    let mut sorted = seeds.clone();
    sorted.sort_unstable();
    sorted.dedup();
    assert_eq!(sorted.len(), seeds.len());
}
