use flowrate::stats::chi_square;
use flowrate::targets::{TargetKind, TargetSpec};
use statrs::distribution::{ChiSquared, ContinuousCDF};

const BINS: usize = 50;
const DRAWS: usize = 100_000;

fn spec(kind: TargetKind, dim: usize, seed: u64) -> TargetSpec {
    TargetSpec {
        seed,
        ..TargetSpec::new(kind, dim)
    }
}

/// χ² of the axis-0 histogram against the marginal CDF, with its 1e-3 critical value.
fn histogram_check(spec: &TargetSpec, seed: u64) -> (f64, f64) {
    let target = spec.build().unwrap();
    let pts = target.sample(seed, DRAWS).unwrap();
    let mut counts = vec![0u64; BINS];
    for row in pts.rows() {
        let b = (((row[0] + 1.0) / 2.0 * BINS as f64) as usize).min(BINS - 1);
        counts[b] += 1;
    }
    let edges: Vec<f64> = (0..=BINS).map(|i| -1.0 + 2.0 * i as f64 / BINS as f64).collect();
    let expected: Vec<f64> = edges
        .windows(2)
        .map(|w| DRAWS as f64 * (target.marginal_cdf(0, w[1]) - target.marginal_cdf(0, w[0])))
        .collect();
    let stat = chi_square(&counts, &expected);
    let crit = ChiSquared::new((BINS - 1) as f64).unwrap().inverse_cdf(1.0 - 1e-3);
    (stat, crit)
}

#[test]
fn samples_match_density_histograms() {
    for (kind, dim, seed) in [
        (TargetKind::Uniform, 1, 0),
        (TargetKind::SplineMixture, 1, 3),
        (TargetKind::PerturbedUniform, 1, 5),
        (TargetKind::SplineMixture, 2, 7),
        (TargetKind::PerturbedUniform, 2, 9),
    ] {
        let (stat, crit) = histogram_check(&spec(kind, dim, seed), 1234 + seed);
        assert!(stat < crit, "{kind:?} d={dim}: chi2 {stat} >= {crit}");
    }
}

#[test]
fn densities_have_unit_mass() {
    for (kind, dim) in [
        (TargetKind::SplineMixture, 1),
        (TargetKind::PerturbedUniform, 1),
        (TargetKind::SplineMixture, 2),
        (TargetKind::PerturbedUniform, 2),
    ] {
        let target = spec(kind, dim, 11).build().unwrap();
        assert!((target.mass().unwrap() - 1.0).abs() < 1e-6, "{kind:?} d={dim}");
    }
}

#[test]
fn symmetric_spline_has_zero_mean() {
    let mut s = spec(TargetKind::SplineMixture, 1, 2);
    s.symmetric = true;
    let target = s.build().unwrap();
    let mean = target.expectation(|x| x[0], 16).unwrap();
    assert!(mean.abs() < 1e-12);
}
