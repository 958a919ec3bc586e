//! Conditional paths, conditional and averaged velocities, and the
//! flow-matching loss.

use rand::Rng as _;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::field::VelocityField;
use crate::points::{sq_dist, Points};
use crate::rng::{substream, Rng};
use crate::schedules::{Schedule, ScheduleValue};

const SIGMA_FLOOR: f64 = 1e-300;

/// A teaching pair `(x_t, v_target)` drawn at time `t` for one data point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathSample {
    pub t: f64,
    pub x_t: Vec<f64>,
    pub v_target: Vec<f64>,
    pub eps: Vec<f64>,
}

fn check_time(t: f64) -> Result<()> {
    if !(t > 0.0 && t <= 1.0) {
        return Err(Error::Domain(format!("path time must lie in (0, 1], got {t}")));
    }
    Ok(())
}

/// `x_t = σ_t ε + m_t x₁` and `v = σ′_t ε + m′_t x₁` for a given noise draw.
pub fn path_point(schedule: &Schedule, t: f64, x1: &[f64], eps: &[f64]) -> Result<PathSample> {
    check_time(t)?;
    if eps.len() != x1.len() {
        return Err(Error::Dimension {
            expected: x1.len(),
            got: eps.len(),
        });
    }
    let s = schedule.eval_unchecked(t);
    Ok(PathSample {
        t,
        x_t: x1.iter().zip(eps).map(|(y, e)| s.sigma * e + s.m * y).collect(),
        v_target: x1.iter().zip(eps).map(|(y, e)| s.dsigma * e + s.dm * y).collect(),
        eps: eps.to_vec(),
    })
}

/// [`path_point`] with `ε ~ N(0, I)` drawn from `seed`.
pub fn sample_path_point(schedule: &Schedule, t: f64, x1: &[f64], seed: u64) -> Result<PathSample> {
    let mut rng = substream(seed, 0);
    let eps: Vec<f64> = (0..x1.len()).map(|_| rng.sample(StandardNormal)).collect();
    path_point(schedule, t, x1, &eps)
}

/// `v_t(x | x₁) = σ′_t (x − m_t x₁)/σ_t + m′_t x₁`.
pub fn conditional_velocity(schedule: &Schedule, t: f64, x: &[f64], x1: &[f64]) -> Result<Vec<f64>> {
    check_time(t)?;
    let s = schedule.eval_unchecked(t);
    if s.sigma < SIGMA_FLOOR {
        return Err(Error::Singularity(format!("sigma_t = {} at t = {t}", s.sigma)));
    }
    Ok(x.iter()
        .zip(x1)
        .map(|(xi, yi)| s.dsigma * (xi - s.m * yi) / s.sigma + s.dm * yi)
        .collect())
}

/// The exact averaged field and marginal density for an empirical target
/// `(1/n) Σ δ_{y_j}`.
#[derive(Debug, Clone)]
pub struct EmpiricalOracle {
    data: Points,
    schedule: Schedule,
}

impl EmpiricalOracle {
    pub fn new(data: Points, schedule: Schedule) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::Parameter("oracle needs at least one data point".into()));
        }
        Ok(Self { data, schedule })
    }

    pub fn data(&self) -> &Points {
        &self.data
    }

    pub fn schedule(&self) -> &Schedule {
        &self.schedule
    }

    fn coefficients(&self, t: f64) -> Result<ScheduleValue> {
        check_time(t)?;
        let s = self.schedule.eval_unchecked(t);
        if s.sigma < SIGMA_FLOOR {
            return Err(Error::Singularity(format!("sigma_t = {} at t = {t}", s.sigma)));
        }
        Ok(s)
    }

    /// Posterior weights `w_j ∝ exp(−‖x − m_t y_j‖² / 2σ_t²)`, max-shifted.
    pub fn weights(&self, t: f64, x: &[f64]) -> Result<Vec<f64>> {
        let s = self.coefficients(t)?;
        Ok(self.weights_with(&s, x))
    }

    fn weights_with(&self, s: &ScheduleValue, x: &[f64]) -> Vec<f64> {
        let inv = 1.0 / (2.0 * s.sigma * s.sigma);
        let mut logits: Vec<f64> = self
            .data
            .rows()
            .map(|y| {
                let d: f64 = x.iter().zip(y).map(|(a, b)| (a - s.m * b).powi(2)).sum();
                -d * inv
            })
            .collect();
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for l in logits.iter_mut() {
            *l = (*l - max).exp();
            total += *l;
        }
        for l in logits.iter_mut() {
            *l /= total;
        }
        logits
    }

    /// Posterior mean `ȳ = Σ_j w_j y_j`.
    pub fn posterior_mean(&self, t: f64, x: &[f64]) -> Result<Vec<f64>> {
        let s = self.coefficients(t)?;
        Ok(self.posterior_mean_with(&s, x))
    }

    fn posterior_mean_with(&self, s: &ScheduleValue, x: &[f64]) -> Vec<f64> {
        let w = self.weights_with(s, x);
        let mut ybar = vec![0.0; self.data.dim()];
        for (wj, y) in w.iter().zip(self.data.rows()) {
            for (acc, yi) in ybar.iter_mut().zip(y) {
                *acc += wj * yi;
            }
        }
        ybar
    }

    /// `v_t(x) = σ′(x − m ȳ)/σ + m′ ȳ`.
    pub fn oracle_velocity(&self, t: f64, x: &[f64]) -> Result<Vec<f64>> {
        let s = self.coefficients(t)?;
        let ybar = self.posterior_mean_with(&s, x);
        Ok(x.iter()
            .zip(&ybar)
            .map(|(xi, yi)| s.dsigma * (xi - s.m * yi) / s.sigma + s.dm * yi)
            .collect())
    }

    /// `p_t(x) = (1/n) Σ_j N(x; m_t y_j, σ_t² I)`: a Gaussian KDE with
    /// bandwidth `σ_t` centred at `m_t y_j`.
    pub fn oracle_density(&self, t: f64, x: &[f64]) -> Result<f64> {
        let s = self.coefficients(t)?;
        let d = self.data.dim() as f64;
        let inv = 1.0 / (2.0 * s.sigma * s.sigma);
        let logits: Vec<f64> = self
            .data
            .rows()
            .map(|y| {
                let scaled: Vec<f64> = y.iter().map(|v| s.m * v).collect();
                -sq_dist(x, &scaled) * inv
            })
            .collect();
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = logits.iter().map(|l| (l - max).exp()).sum();
        let log_norm = -0.5 * d * (2.0 * std::f64::consts::PI * s.sigma * s.sigma).ln();
        Ok((max + sum.ln() + log_norm).exp() / self.data.len() as f64)
    }

    /// Exact draws `m_t y_J + σ_t ε` with `J` uniform.
    pub fn sample_marginal(&self, t: f64, seed: u64, n: usize) -> Result<Points> {
        let s = self.coefficients(t)?;
        let mut rng = substream(seed, 0x6d61);
        let d = self.data.dim();
        let mut coords = Vec::with_capacity(n * d);
        for _ in 0..n {
            let j = rng.random_range(0..self.data.len());
            for &y in self.data.row(j) {
                let e: f64 = rng.sample(StandardNormal);
                coords.push(s.m * y + s.sigma * e);
            }
        }
        Points::new(d, coords)
    }
}

impl VelocityField for EmpiricalOracle {
    fn dim(&self) -> usize {
        self.data.dim()
    }

    /// Times outside `(0, 1]` are clamped into it.
    fn velocity(&self, x: &[f64], t: f64, out: &mut [f64]) {
        let s = self.schedule.eval_unchecked(t.clamp(f64::MIN_POSITIVE, 1.0));
        let ybar = self.posterior_mean_with(&s, x);
        for ((o, xi), yi) in out.iter_mut().zip(x).zip(&ybar) {
            *o = s.dsigma * (xi - s.m * yi) / s.sigma + s.dm * yi;
        }
    }
}

/// Monte-Carlo estimate of the flow-matching loss on `[t_lo, t_hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LossEstimate {
    /// Mean squared residual per draw (`t` uniform on the interval).
    pub normalized: f64,
    /// `normalized · (t_hi − t_lo)`: the loss integrated over `dt`.
    pub unnormalized: f64,
    /// Standard error of `normalized` across data points.
    pub std_err: f64,
}

/// Stratified time draws: one uniform draw in each of `k` equal strata.
pub(crate) fn stratified_times(rng: &mut Rng, t_lo: f64, t_hi: f64, k: usize) -> Vec<f64> {
    let w = (t_hi - t_lo) / k as f64;
    (0..k)
        .map(|i| (t_lo + w * (i as f64 + rng.random::<f64>())).min(t_hi))
        .collect()
}

/// `(1/n) Σ_i ℓ(x^i)` with `mc` stratified `(t, ε)` draws per datum. Datum `i`
/// uses substream `i` of `seed`, so the value does not depend on threading.
pub fn fm_loss<V: VelocityField + ?Sized>(
    field: &V,
    data: &Points,
    schedule: &Schedule,
    t_lo: f64,
    t_hi: f64,
    seed: u64,
    mc: usize,
) -> Result<LossEstimate> {
    if !(t_lo > 0.0 && t_lo < t_hi && t_hi <= 1.0) {
        return Err(Error::Domain(format!(
            "loss interval must satisfy 0 < t_lo < t_hi <= 1, got [{t_lo}, {t_hi}]"
        )));
    }
    if mc == 0 {
        return Err(Error::Parameter("mc must be at least 1".into()));
    }
    if data.is_empty() {
        return Err(Error::Parameter("loss needs at least one data point".into()));
    }
    let d = data.dim();
    let per_datum: Vec<f64> = (0..data.len())
        .into_par_iter()
        .map(|i| {
            let mut rng = substream(seed, i as u64);
            let y = data.row(i);
            let mut eps = vec![0.0; d];
            let mut out = vec![0.0; d];
            let mut acc = 0.0;
            for t in stratified_times(&mut rng, t_lo, t_hi, mc) {
                for e in eps.iter_mut() {
                    *e = rng.sample(StandardNormal);
                }
                let s = schedule.eval_unchecked(t);
                let x_t: Vec<f64> = y.iter().zip(&eps).map(|(yi, e)| s.sigma * e + s.m * yi).collect();
                field.velocity(&x_t, t, &mut out);
                acc += out
                    .iter()
                    .zip(y.iter().zip(&eps))
                    .map(|(o, (yi, e))| (o - s.dsigma * e - s.dm * yi).powi(2))
                    .sum::<f64>();
            }
            acc / mc as f64
        })
        .collect();
    let n = per_datum.len() as f64;
    let mean = per_datum.iter().sum::<f64>() / n;
    let var = if per_datum.len() > 1 {
        per_datum.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    Ok(LossEstimate {
        normalized: mean,
        unnormalized: mean * (t_hi - t_lo),
        std_err: (var / n).sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::FnField;

    #[test]
    fn affine_path_point_with_zero_noise() {
        let p = path_point(&Schedule::affine(), 0.5, &[1.0], &[0.0]).unwrap();
        assert_eq!(p.x_t, vec![0.5]);
        assert_eq!(p.v_target, vec![-1.0]);
    }

    #[test]
    fn affine_target_is_difference() {
        let p = path_point(&Schedule::affine(), 0.3, &[0.7, -0.2], &[1.5, 0.4]).unwrap();
        assert!((p.v_target[0] - (1.5 - 0.7)).abs() < 1e-15);
        assert!((p.v_target[1] - (0.4 + 0.2)).abs() < 1e-15);
    }

    #[test]
    fn vp_path_point() {
        let p = path_point(&Schedule::variance_preserving(), 0.64, &[0.0], &[1.0]).unwrap();
        assert!((p.x_t[0] - 0.8).abs() < 1e-15);
        assert!((p.v_target[0] - 0.625).abs() < 1e-15);
        let v = conditional_velocity(&Schedule::variance_preserving(), 0.64, &[0.8], &[0.0]).unwrap();
        assert!((v[0] - 0.625).abs() < 1e-15);
    }

    #[test]
    fn conditional_velocity_cases() {
        let v = conditional_velocity(&Schedule::affine(), 0.5, &[0.5], &[1.0]).unwrap();
        assert_eq!(v, vec![-1.0]);
        let s = Schedule::power_law(0.7, 0.8, 0.4, 1.2).unwrap();
        let sv = s.eval(0.3).unwrap();
        let v = conditional_velocity(&s, 0.3, &[sv.m * 0.4], &[0.4]).unwrap();
        assert!((v[0] - sv.dm * 0.4).abs() < 1e-15);
        assert!(sample_path_point(&s, 0.0, &[0.0], 1).is_err());
        assert!(sample_path_point(&s, 1.2, &[0.0], 1).is_err());
    }

    #[test]
    fn single_atom_oracle() {
        let o = EmpiricalOracle::new(Points::from_scalars(vec![0.0]), Schedule::affine()).unwrap();
        for &(t, x) in &[(0.2, 0.3), (0.9, -1.4), (0.01, 0.002)] {
            assert!((o.oracle_velocity(t, &[x]).unwrap()[0] - x / t).abs() < 1e-12 * (x / t).abs());
        }
        let o = EmpiricalOracle::new(Points::from_scalars(vec![0.0]), Schedule::affine()).unwrap();
        // sigma_1 = 1, m_1 = 0
        let p = o.oracle_density(1.0, &[0.0]).unwrap();
        assert!((p - 0.398_942_280_401_432_7).abs() < 1e-15);
    }

    #[test]
    fn two_atom_symmetry() {
        let o = EmpiricalOracle::new(Points::from_scalars(vec![-1.0, 1.0]), Schedule::affine()).unwrap();
        assert!(o.oracle_velocity(0.5, &[0.0]).unwrap()[0].abs() < 1e-15);
        let w = o.weights(0.5, &[0.3]).unwrap();
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        // m_1 = 0 collapses the mixture to N(0, 1)
        let p = o.oracle_density(1.0, &[0.7]).unwrap();
        let phi = (-0.5f64 * 0.49).exp() / (2.0 * std::f64::consts::PI).sqrt();
        assert!((p - phi).abs() < 1e-15);
    }

    #[test]
    fn loss_of_zero_field_single_atom() {
        let data = Points::from_scalars(vec![0.0; 64]);
        let zero = FnField::new(1, |_x: &[f64], _t: f64, out: &mut [f64]| out[0] = 0.0);
        let l = fm_loss(&zero, &data, &Schedule::affine(), 0.5, 1.0, 3, 64).unwrap();
        let n_mc = (64 * 64) as f64;
        assert!((l.normalized - 1.0).abs() < 3.0 / n_mc.sqrt(), "{}", l.normalized);
        assert!((l.unnormalized - 0.5 * l.normalized).abs() < 1e-15);
    }

    #[test]
    fn loss_of_conditional_replay_is_zero() {
        let y = [0.37];
        let data = Points::from_scalars(y.to_vec());
        let s = Schedule::power_law(1.0, 0.6, 0.5, 1.0).unwrap();
        let replay = FnField::new(1, move |x: &[f64], t: f64, out: &mut [f64]| {
            out[0] = conditional_velocity(&s, t, x, &y).unwrap()[0];
        });
        let l = fm_loss(&replay, &data, &s, 0.1, 1.0, 11, 32).unwrap();
        assert!(l.normalized < 1e-20);
    }

    #[test]
    fn loss_rejects_bad_interval() {
        let data = Points::from_scalars(vec![0.0]);
        let zero = FnField::new(1, |_x: &[f64], _t: f64, out: &mut [f64]| out[0] = 0.0);
        assert!(fm_loss(&zero, &data, &Schedule::affine(), 0.5, 0.4, 0, 1).is_err());
        assert!(fm_loss(&zero, &data, &Schedule::affine(), 0.0, 0.4, 0, 1).is_err());
    }
}
