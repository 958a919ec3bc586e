use std::f64::consts::PI;

use flowrate::bspline::{
    eval_cardinal, fit, rate_sweep, smoothed_basis_integral, LevelAllocation, SmoothedKind, SplineBasisIndex,
};
use flowrate::quadrature::GaussLegendre;
use proptest::prelude::*;

proptest! {
    #[test]
    fn cardinal_splines_partition_unity(order in 1usize..=3, x in -10.0..10.0f64) {
        let total: f64 = (-20i64..20).map(|k| eval_cardinal(order, x - k as f64)).sum();
        prop_assert!((total - 1.0).abs() < 1e-13);
        prop_assert!(eval_cardinal(order, x) >= 0.0);
    }
}

#[test]
fn fitting_is_a_projection() {
    for dim in [1, 2] {
        let f = |x: &[f64]| x.iter().map(|v| (2.0 * v).sin() + v * v).sum::<f64>();
        let first = fit(f, dim, 40, 3, LevelAllocation::SingleFine).unwrap();
        let second = fit(|x| first.eval(x), dim, 40, 3, LevelAllocation::SingleFine).unwrap();
        assert_eq!(first.terms.len(), second.terms.len());
        for ((i, a), (j, b)) in first.terms.iter().zip(&second.terms) {
            assert_eq!(i, j);
            assert!((a - b).abs() <= 1e-10, "d={dim} {i:?}: {a} vs {b}");
        }
    }
}

#[test]
fn nested_sweeps_do_not_get_worse() {
    let f = |x: &[f64]| (PI * x[0]).sin() * (1.0 + 0.5 * x[0]);
    let sweep = rate_sweep(f, 3.0, 1, &[8, 16, 32, 64, 128], 3).unwrap();
    for w in sweep.rows.windows(2) {
        assert!(w[1].l2_error <= w[0].l2_error * (1.0 + 1e-9), "{:?}", sweep.rows);
    }
}

#[test]
fn smoothed_density_integrates_to_basis_mass() {
    let rule = GaussLegendre::new(20);
    let breaks: Vec<f64> = (0..=12).map(|i| -3.0 + 0.5 * i as f64).collect();

    let idx = SplineBasisIndex::new(3, vec![2], vec![-3]).unwrap();
    let total = rule.integrate_panels(
        |x| smoothed_basis_integral(&idx, SmoothedKind::Density, 0.7, 0.2, &[x]).unwrap()[0],
        &breaks,
    );
    assert!((total - idx.mass()).abs() < 1e-6, "{total} vs {}", idx.mass());

    let idx = SplineBasisIndex::new(2, vec![1, 0], vec![-1, -2]).unwrap();
    let coarse = GaussLegendre::new(10);
    let total = coarse.integrate_panels(
        |x| {
            coarse.integrate_panels(
                |y| smoothed_basis_integral(&idx, SmoothedKind::Density, 0.8, 0.3, &[x, y]).unwrap()[0],
                &breaks,
            )
        },
        &breaks,
    );
    assert!((total - idx.mass()).abs() < 1e-6, "{total} vs {}", idx.mass());
}
