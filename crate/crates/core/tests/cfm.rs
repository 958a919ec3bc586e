use flowrate::cfm::{conditional_velocity, fm_loss, sample_path_point, EmpiricalOracle};
use flowrate::points::Points;
use flowrate::rng::derive_seed;
use flowrate::schedules::Schedule;
use flowrate::stats::{ks_critical, ks_statistic};
use proptest::prelude::*;
use statrs::distribution::{ContinuousCDF, Normal};

fn data_1d() -> Points {
    Points::from_scalars(vec![-0.8, -0.3, 0.1, 0.45, 0.9])
}

fn mixture_cdf(data: &Points, schedule: &Schedule, t: f64, x: f64) -> f64 {
    let s = schedule.eval(t).unwrap();
    let normal = Normal::standard();
    data.coords().iter().map(|y| normal.cdf((x - s.m * y) / s.sigma)).sum::<f64>() / data.len() as f64
}

#[test]
fn path_points_follow_the_oracle_marginal() {
    let data = data_1d();
    for schedule in [Schedule::affine(), Schedule::variance_preserving()] {
        for &t in &[0.05, 0.3, 0.8] {
            let per = 20_000;
            let mut xs = Vec::with_capacity(per * data.len());
            for (i, y) in data.rows().enumerate() {
                for k in 0..per {
                    let seed = derive_seed(99, &[i as u64, k as u64]);
                    xs.push(sample_path_point(&schedule, t, y, seed).unwrap().x_t[0]);
                }
            }
            let ks = ks_statistic(&xs, |x| mixture_cdf(&data, &schedule, t, x));
            assert!(ks < ks_critical(xs.len(), 1e-3), "{schedule} t={t}: ks {ks}");
        }
    }
}

/// Max of `|∂_t p + ∂_x(p v)|` and of `|∂_t p|` over the grid, central differences.
fn continuity_residual(oracle: &EmpiricalOracle, h: f64) -> (f64, f64) {
    let flux = |t: f64, x: f64| oracle.oracle_density(t, &[x]).unwrap() * oracle.oracle_velocity(t, &[x]).unwrap()[0];
    let (mut resid, mut scale) = (0.0f64, 0.0f64);
    for i in 0..=80 {
        let t = 0.1 + 0.8 * i as f64 / 80.0;
        for j in 0..=200 {
            let x = -2.0 + 4.0 * j as f64 / 200.0;
            let dt = (oracle.oracle_density(t + h, &[x]).unwrap() - oracle.oracle_density(t - h, &[x]).unwrap()) / (2.0 * h);
            let dx = (flux(t, x + h) - flux(t, x - h)) / (2.0 * h);
            resid = resid.max((dt + dx).abs());
            scale = scale.max(dt.abs());
        }
    }
    (resid, scale)
}

#[test]
fn oracle_satisfies_the_continuity_equation() {
    for schedule in [Schedule::affine(), Schedule::variance_preserving(), Schedule::power_law(1.0, 0.75, 0.5, 1.5).unwrap()] {
        let oracle = EmpiricalOracle::new(data_1d(), schedule).unwrap();
        let (resid, scale) = continuity_residual(&oracle, 1e-4);
        assert!(resid <= 1e-3 * scale, "{schedule}: {resid} vs {scale}");
    }
}

#[test]
fn single_point_oracle_is_the_conditional_field() {
    for schedule in [Schedule::affine(), Schedule::variance_preserving()] {
        let y = [0.37, -0.2];
        let oracle = EmpiricalOracle::new(Points::new(2, y.to_vec()).unwrap(), schedule).unwrap();
        for i in 1..=20 {
            let t = i as f64 / 20.0;
            for j in 0..=20 {
                let x = [-2.0 + 0.2 * j as f64, 1.0 - 0.1 * j as f64];
                let a = oracle.oracle_velocity(t, &x).unwrap();
                let b = conditional_velocity(&schedule, t, &x, &y).unwrap();
                assert_eq!(a, b, "t={t} x={x:?}");
            }
        }
    }
}

#[test]
fn conditional_replay_has_lower_loss_than_zero() {
    let data = data_1d();
    let schedule = Schedule::affine();
    let oracle = EmpiricalOracle::new(data.clone(), schedule).unwrap();
    let zero = flowrate::field::ConstantField { value: vec![0.0] };
    let a = fm_loss(&oracle, &data, &schedule, 0.01, 1.0, 3, 64).unwrap();
    let b = fm_loss(&zero, &data, &schedule, 0.01, 1.0, 3, 64).unwrap();
    assert!(a.normalized < b.normalized);
    let again = fm_loss(&oracle, &data, &schedule, 0.01, 1.0, 3, 64).unwrap();
    assert_eq!(a, again);
}

proptest! {
    #[test]
    fn weights_sum_to_one(
        ys in prop::collection::vec(-1.0..1.0f64, 1..40),
        x in -3.0..3.0f64,
        t in 1e-4..1.0f64,
    ) {
        let oracle = EmpiricalOracle::new(Points::from_scalars(ys), Schedule::variance_preserving()).unwrap();
        let w = oracle.weights(t, &[x]).unwrap();
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(w.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn density_is_the_gaussian_kde(
        ys in prop::collection::vec(-1.0..1.0f64, 1..20),
        x in -2.0..2.0f64,
        t in 0.05..1.0f64,
    ) {
        let schedule = Schedule::affine();
        let s = schedule.eval(t).unwrap();
        let kde: f64 = ys
            .iter()
            .map(|y| {
                let z = (x - s.m * y) / s.sigma;
                (-0.5 * z * z).exp() / (s.sigma * (2.0 * std::f64::consts::PI).sqrt())
            })
            .sum::<f64>()
            / ys.len() as f64;
        let oracle = EmpiricalOracle::new(Points::from_scalars(ys), schedule).unwrap();
        let p = oracle.oracle_density(t, &[x]).unwrap();
        prop_assert!((p - kde).abs() <= 1e-12 * kde + 1e-250, "{} vs {}", p, kde);
    }
}
