//! Dyadic time partitions, per-interval training and the stitched field.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::field::VelocityField;
use crate::points::Points;
use crate::quadrature::GaussLegendre;
use crate::rng::derive_seed;
use crate::schedules::Schedule;
use crate::theory::basis_count;
use crate::velocity_model::{fit_interval, ModelConfig, TrainConfig, TrainReport, VelocityNet};

/// Limits applied while building a partition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PartitionCaps {
    /// Floor on the stopping time.
    pub t0_min: f64,
    /// Largest number of intervals.
    pub k_max: usize,
    /// Reject stopping exponents below `(s + 1)/κ`.
    pub enforce_r0: bool,
}

impl Default for PartitionCaps {
    fn default() -> Self {
        Self {
            t0_min: 1e-4,
            k_max: 64,
            enforce_r0: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Default)]
pub struct PartitionFlags {
    /// `N^{−R₀}` fell below the floor and was raised to it.
    pub t0_clipped: bool,
    /// No knot lies in `[T*, 3T*]`; the first knot above `T*` was used.
    pub t_star_off_grid: bool,
}

/// Knots `t₀ = T₀ < t₁ < … < t_K = 1` with `t_j = 2 t_{j−1}` below the last.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimePartition {
    pub t0: f64,
    pub knots: Vec<f64>,
    /// Index of the first knot at or above `T*`.
    pub j_star: usize,
    pub t_star: f64,
    /// Basis budget of interval `j` (1-based) at position `j − 1`.
    pub basis_counts: Vec<usize>,
    pub n_basis: usize,
    pub r0: Option<f64>,
    pub s: f64,
    pub d: usize,
    pub kappa: f64,
    pub delta: f64,
    pub flags: PartitionFlags,
}

fn check(s: f64, d: usize, kappa: f64, delta: f64) -> Result<()> {
    if !(s > 0.0) || d == 0 {
        return Err(Error::Parameter("s and d must be positive".into()));
    }
    if !(kappa >= 0.5) {
        return Err(Error::Parameter(format!("kappa must be at least 1/2, got {kappa}")));
    }
    if !(delta > 0.0 && delta < 1.0 / kappa) {
        return Err(Error::Parameter(format!("delta must lie in (0, 1/kappa), got {delta}")));
    }
    Ok(())
}

/// Partition with `T₀ = N^{−R₀}` (floored at `caps.t0_min`), `N = round(n^{d/(2s+d)})`.
pub fn build_partition(
    n: usize,
    s: f64,
    d: usize,
    kappa: f64,
    delta: f64,
    r0: f64,
    caps: &PartitionCaps,
) -> Result<TimePartition> {
    if n < 2 {
        return Err(Error::Parameter(format!("n must be at least 2, got {n}")));
    }
    check(s, d, kappa, delta)?;
    if caps.enforce_r0 && r0 < (s + 1.0) / kappa {
        return Err(Error::Parameter(format!(
            "stopping exponent {r0} is below (s + 1)/kappa = {}",
            (s + 1.0) / kappa
        )));
    }
    let big_n = basis_count(n, s, d);
    partition_with_basis_count(big_n, s, d, kappa, delta, r0, caps)
}

/// Same as [`build_partition`] with the basis count `N` given directly.
pub fn partition_with_basis_count(
    big_n: usize,
    s: f64,
    d: usize,
    kappa: f64,
    delta: f64,
    r0: f64,
    caps: &PartitionCaps,
) -> Result<TimePartition> {
    check(s, d, kappa, delta)?;
    let raw = (big_n as f64).powf(-r0);
    let clipped = raw < caps.t0_min;
    let mut p = fixed_partition(raw.max(caps.t0_min), big_n, s, d, kappa, delta, caps.k_max)?;
    p.r0 = Some(r0);
    p.flags.t0_clipped = clipped;
    Ok(p)
}

/// Partition from an explicit stopping time.
pub fn fixed_partition(
    t0: f64,
    big_n: usize,
    s: f64,
    d: usize,
    kappa: f64,
    delta: f64,
    k_max: usize,
) -> Result<TimePartition> {
    check(s, d, kappa, delta)?;
    if !(t0 > 0.0 && t0 < 1.0) {
        return Err(Error::Parameter(format!("stopping time must lie in (0, 1), got {t0}")));
    }
    let big_n = big_n.max(1);
    let mut knots = vec![t0];
    while *knots.last().unwrap() * 2.0 < 1.0 {
        let next = knots.last().unwrap() * 2.0;
        knots.push(next);
        if knots.len() > k_max {
            return Err(Error::Parameter(format!("partition needs more than {k_max} intervals")));
        }
    }
    knots.push(1.0);
    let nf = big_n as f64;
    let t_star = nf.powf(-(1.0 / kappa - delta) / d as f64);
    let j_star = knots.iter().position(|&t| t >= t_star).unwrap_or(knots.len() - 1);
    let off_grid = knots[j_star] > 3.0 * t_star || knots[j_star] < t_star;
    let basis_counts = (1..knots.len())
        .map(|j| {
            if j <= j_star {
                big_n
            } else {
                let raw = knots[j - 1].powf(-(d as f64) * kappa) * nf.powf(delta * kappa);
                (raw.ceil() as usize).clamp(1, big_n)
            }
        })
        .collect();
    Ok(TimePartition {
        t0,
        knots,
        j_star,
        t_star,
        basis_counts,
        n_basis: big_n,
        r0: None,
        s,
        d,
        kappa,
        delta,
        flags: PartitionFlags {
            t0_clipped: false,
            t_star_off_grid: off_grid,
        },
    })
}

impl TimePartition {
    /// A single interval `[T₀, 1]` with budget `N`.
    pub fn single(t0: f64, big_n: usize) -> Result<Self> {
        if !(t0 > 0.0 && t0 < 1.0) {
            return Err(Error::Parameter(format!("stopping time must lie in (0, 1), got {t0}")));
        }
        Ok(Self {
            t0,
            knots: vec![t0, 1.0],
            j_star: 1,
            t_star: f64::NAN,
            basis_counts: vec![big_n.max(1)],
            n_basis: big_n.max(1),
            r0: None,
            s: f64::NAN,
            d: 0,
            kappa: f64::NAN,
            delta: f64::NAN,
            flags: PartitionFlags::default(),
        })
    }

    pub fn intervals(&self) -> usize {
        self.knots.len() - 1
    }

    /// 0-based interval containing `t`: `[t_{j}, t_{j+1})`, the last one
    /// closed. Times outside `[T₀, 1]` go to the nearest end interval.
    pub fn interval_of(&self, t: f64) -> usize {
        let k = self.intervals();
        let idx = self.knots.partition_point(|&knot| knot <= t);
        idx.saturating_sub(1).min(k - 1)
    }

    /// `exp(∫ C̃/u du)` over each interval, evaluated by quadrature. Interior
    /// intervals give exactly `2^{C̃}`.
    pub fn gronwall_factors(&self, c_tilde: f64) -> Vec<f64> {
        let rule = GaussLegendre::new(16);
        self.knots
            .windows(2)
            .map(|w| {
                let (a, b) = (w[0].ln(), w[1].ln());
                // substitute u = e^z so the integrand is constant
                rule.integrate(|_| c_tilde, a, b).exp()
            })
            .collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("partition serializes")
    }
}

/// `n^{−(1/κ − δ)/(2s + d)}`.
pub fn t_star_balance(n: usize, s: f64, d: usize, kappa: f64, delta: f64) -> f64 {
    (n as f64).powf(-(1.0 / kappa - delta) / (2.0 * s + d as f64))
}

/// `2^{C̃}`, the bound on the Grönwall factor across one doubling interval.
pub fn gronwall_bound(c_tilde: f64) -> f64 {
    2f64.powf(c_tilde)
}

/// Fields stitched on a partition; dispatch follows [`TimePartition::interval_of`].
#[derive(Debug, Clone)]
pub struct Piecewise<F> {
    knots: Vec<f64>,
    parts: Vec<F>,
}

impl<F: VelocityField> Piecewise<F> {
    pub fn new(knots: Vec<f64>, parts: Vec<F>) -> Result<Self> {
        if parts.is_empty() || knots.len() != parts.len() + 1 {
            return Err(Error::Parameter(format!(
                "{} knots cannot carry {} pieces",
                knots.len(),
                parts.len()
            )));
        }
        if knots.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::Parameter("knots must increase".into()));
        }
        let d = parts[0].dim();
        if parts.iter().any(|p| p.dim() != d) {
            return Err(Error::Parameter("pieces disagree on dimension".into()));
        }
        Ok(Self { knots, parts })
    }

    pub fn interval_of(&self, t: f64) -> usize {
        let idx = self.knots.partition_point(|&knot| knot <= t);
        idx.saturating_sub(1).min(self.parts.len() - 1)
    }

    pub fn parts(&self) -> &[F] {
        &self.parts
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }
}

impl<F: VelocityField> VelocityField for Piecewise<F> {
    fn dim(&self) -> usize {
        self.parts[0].dim()
    }

    fn velocity(&self, x: &[f64], t: f64, out: &mut [f64]) {
        self.parts[self.interval_of(t)].velocity(x, t, out)
    }
}

pub type PiecewiseVelocityField = Piecewise<VelocityNet>;

/// Seed of interval `j` (0-based); interval 0 uses `seed` itself.
pub fn interval_seed(seed: u64, j: usize) -> u64 {
    if j == 0 {
        seed
    } else {
        derive_seed(seed, &[j as u64])
    }
}

/// Trains one network per interval on the full data, in parallel.
pub fn train_partitioned(
    data: &Points,
    schedule: Schedule,
    partition: &TimePartition,
    model: &ModelConfig,
    train: &TrainConfig,
) -> Result<(PiecewiseVelocityField, Vec<TrainReport>)> {
    let trained: Vec<(VelocityNet, TrainReport)> = (0..partition.intervals())
        .into_par_iter()
        .map(|j| {
            let cfg = TrainConfig {
                seed: interval_seed(train.seed, j),
                ..*train
            };
            fit_interval(
                data,
                schedule,
                partition.knots[j],
                partition.knots[j + 1],
                partition.basis_counts[j],
                model,
                &cfg,
            )
            .map_err(|e| match e {
                Error::Divergence { step, loss, .. } => Error::Divergence {
                    step,
                    interval: Some(j),
                    loss,
                },
                other => other,
            })
        })
        .collect::<Result<_>>()?;
    let (nets, reports): (Vec<_>, Vec<_>) = trained.into_iter().unzip();
    Ok((Piecewise::new(partition.knots.clone(), nets)?, reports))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::ConstantField;

    #[test]
    fn dyadic_knots() {
        let caps = PartitionCaps {
            enforce_r0: false,
            ..Default::default()
        };
        let p = partition_with_basis_count(16, 1.0, 2, 0.5, 0.05, 2.0, &caps).unwrap();
        assert_eq!(p.t0, 1.0 / 256.0);
        assert_eq!(p.intervals(), 8);
        for (j, &t) in p.knots.iter().enumerate() {
            assert_eq!(t, 2f64.powi(j as i32) / 256.0);
        }
    }

    #[test]
    fn t_star_and_sizing() {
        let p = fixed_partition(1e-4, 256, 1.0, 2, 0.5, 0.05, 64).unwrap();
        let expected = 256f64.powf(-(2.0 - 0.05) / 2.0);
        assert!((p.t_star - expected).abs() < 1e-15);
        assert!((p.t_star - 4.48e-3).abs() < 1e-5);
        assert!(p.knots[p.j_star] >= p.t_star && p.knots[p.j_star - 1] < p.t_star);
        let j = p.knots.iter().position(|&t| t == 1e-4 * 2f64.powi(12)).unwrap() + 1;
        assert!(j > p.j_star);
        // t_{j−1} = 0.4096 here; check the rule itself at t_{j−1} = 0.5 below
        let n = (0.5f64.powf(-1.0) * 256f64.powf(0.025)).ceil() as usize;
        assert_eq!(n, 3);
        let raw = (p.knots[j - 1].powf(-1.0) * 256f64.powf(0.025)).ceil() as usize;
        assert_eq!(p.basis_counts[j - 1], raw.min(256));
    }

    #[test]
    fn r0_rule_enforced() {
        let caps = PartitionCaps::default();
        assert!(build_partition(1000, 1.0, 2, 0.5, 0.05, 3.0, &caps).is_err());
        let p = build_partition(1000, 1.0, 2, 0.5, 0.05, 4.0, &caps).unwrap();
        assert!(p.flags.t0_clipped);
        assert_eq!(p.t0, 1e-4);
    }

    #[test]
    fn t_star_balance_examples() {
        assert!((t_star_balance(10_000, 1.0, 2, 0.5, 0.0) - 0.01).abs() < 1e-15);
        let a = t_star_balance(500, 1.0, 2, 1.0, 0.0);
        assert!((a - 500f64.powf(-0.25)).abs() < 1e-15);
    }

    #[test]
    fn dispatch_is_half_open() {
        let knots = vec![0.125, 0.25, 0.5, 1.0];
        let parts: Vec<ConstantField> = (0..3).map(|j| ConstantField { value: vec![j as f64] }).collect();
        let f = Piecewise::new(knots, parts).unwrap();
        assert_eq!(f.eval(&[0.0], 0.25)[0], 1.0);
        assert_eq!(f.eval(&[0.0], 0.25 - 1e-12)[0], 0.0);
        assert_eq!(f.eval(&[0.0], 1.0)[0], 2.0);
        assert_eq!(f.eval(&[0.0], 0.125)[0], 0.0);
    }

    #[test]
    fn gronwall_interior_factor() {
        let p = fixed_partition(1.0 / 64.0, 16, 1.0, 1, 1.0, 0.1, 64).unwrap();
        for f in p.gronwall_factors(1.5) {
            assert!((f - gronwall_bound(1.5)).abs() < 1e-12);
        }
        let p = fixed_partition(0.3, 16, 1.0, 1, 1.0, 0.1, 64).unwrap();
        let g = p.gronwall_factors(1.5);
        assert!(*g.last().unwrap() <= gronwall_bound(1.5));
    }
}
