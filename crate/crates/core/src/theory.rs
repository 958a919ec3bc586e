//! Closed-form rate exponents, sizing rules and bounds.
//!
//! Exponents are reported without poly-log factors, so empirical comparisons
//! hold only up to `poly(log n)`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::schedules::Schedule;
use crate::wasserstein::conv_gap_bound;

/// Smoothness `s`, dimension `d`, schedule exponent `κ`, slack `δ` and sample
/// size `n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RateContext {
    pub s: f64,
    pub d: usize,
    pub kappa: f64,
    pub delta: f64,
    pub n: usize,
}

impl RateContext {
    pub fn new(s: f64, d: usize, kappa: f64, delta: f64, n: usize) -> Result<Self> {
        let ctx = Self { s, d, kappa, delta, n };
        ctx.validate()?;
        Ok(ctx)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.s > 0.0) || self.d == 0 || self.n == 0 {
            return Err(Error::Parameter("s, d and n must be positive".into()));
        }
        if !(self.kappa >= 0.5) {
            return Err(Error::Parameter(format!("kappa must be at least 1/2, got {}", self.kappa)));
        }
        if !(self.delta >= 0.0 && self.delta < 1.0 / self.kappa) {
            return Err(Error::Parameter(format!(
                "delta must lie in [0, 1/kappa), got {}",
                self.delta
            )));
        }
        Ok(())
    }

    pub fn basis_count(&self) -> usize {
        basis_count(self.n, self.s, self.d)
    }
}

/// `(s + 1/(2κ) − δ)/(2s + d)`.
pub fn upper_rate_exponent(ctx: &RateContext) -> f64 {
    (ctx.s + 0.5 / ctx.kappa - ctx.delta) / (2.0 * ctx.s + ctx.d as f64)
}

/// `(s + 1)/(2s + d)`; only meaningful for `d ≥ 2`.
pub fn minimax_lower_exponent(s: f64, d: usize) -> Result<f64> {
    if d < 2 {
        return Err(Error::Domain(format!("the minimax lower bound needs d >= 2, got {d}")));
    }
    Ok((s + 1.0) / (2.0 * s + d as f64))
}

/// `4/(4 + d)`, the mean-squared-error exponent of a Gaussian KDE.
pub fn kde_exponent(d: usize) -> f64 {
    4.0 / (4.0 + d as f64)
}

/// `round(n^{d/(2s+d)})`, at least 1.
pub fn basis_count(n: usize, s: f64, d: usize) -> usize {
    let d = d as f64;
    ((n as f64).powf(d / (2.0 * s + d)).round() as usize).max(1)
}

/// `S · L · ln(ε⁻¹ W B n)`.
pub fn covering_log_bound(sparsity: f64, depth: f64, width: f64, norm: f64, eps: f64, n: f64) -> Result<f64> {
    if !(sparsity > 0.0 && depth > 0.0 && width > 0.0 && norm > 0.0 && n > 0.0) || !(eps > 0.0 && eps < 1.0) {
        return Err(Error::Parameter("covering bound needs positive inputs and eps in (0, 1)".into()));
    }
    Ok(sparsity * depth * (width * norm * n / eps).ln())
}

/// `2·approx + sup_loss/n · (37/9 · log_cover + 32) + 3ε`.
pub fn generalization_bound(approx: f64, sup_loss: f64, n: usize, log_cover: f64, eps: f64) -> f64 {
    2.0 * approx + sup_loss / n as f64 * (37.0 / 9.0 * log_cover + 32.0) + 3.0 * eps
}

/// The convolution gap `W₂(P, P_{T₀})` bound at the stopping time.
pub fn theta_n(schedule: &Schedule, t0: f64, second_moment: f64, d: usize) -> Result<f64> {
    if !(t0 > 0.0 && t0 < 1.0) {
        return Err(Error::Domain(format!("stopping time must lie in (0, 1), got {t0}")));
    }
    let v = schedule.eval(t0)?;
    Ok(conv_gap_bound(v.m, v.sigma, second_moment, d))
}

/// `(s + 1)/min(κ, κ̃)`: the smallest stopping exponent that makes the
/// convolution gap negligible.
pub fn min_stopping_exponent(s: f64, kappa: f64, kappa_tilde: f64) -> f64 {
    (s + 1.0) / kappa.min(kappa_tilde)
}

/// Everything the reports attach to one `(s, d, κ, δ, n)` configuration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TheoryBlock {
    pub s: f64,
    pub d: usize,
    pub kappa: f64,
    pub delta: f64,
    pub upper_exponent: f64,
    /// `None` when `d < 2`.
    pub minimax_exponent: Option<f64>,
    pub kde_exponent: f64,
    pub note: String,
}

impl TheoryBlock {
    pub fn new(s: f64, d: usize, kappa: f64, delta: f64) -> Result<Self> {
        let ctx = RateContext::new(s, d, kappa, delta, 2)?;
        Ok(Self {
            s,
            d,
            kappa,
            delta,
            upper_exponent: upper_rate_exponent(&ctx),
            minimax_exponent: minimax_lower_exponent(s, d).ok(),
            kde_exponent: kde_exponent(d),
            note: "exponents omit poly(log n) factors; empirical slopes are compared modulo logs".into(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ctx(s: f64, d: usize, kappa: f64) -> RateContext {
        RateContext::new(s, d, kappa, 0.0, 100).unwrap()
    }

    #[test]
    fn exponent_examples() {
        assert_eq!(upper_rate_exponent(&ctx(1.0, 2, 0.5)), 0.5);
        assert_eq!(upper_rate_exponent(&ctx(1.0, 2, 1.0)), 0.375);
        assert_eq!(minimax_lower_exponent(1.0, 2).unwrap(), 0.5);
        assert_eq!(minimax_lower_exponent(2.0, 4).unwrap(), 0.375);
        assert!(minimax_lower_exponent(1.0, 1).is_err());
        assert_eq!(kde_exponent(1), 0.8);
        assert_eq!(kde_exponent(4), 0.5);
    }

    #[test]
    fn basis_count_examples() {
        assert_eq!(basis_count(10_000, 1.0, 2), 100);
        assert_eq!(basis_count(2, 1.0, 2), 1);
        let mut prev = 0;
        for n in (2..5000).step_by(37) {
            let b = basis_count(n, 1.5, 3);
            assert!(b >= prev);
            prev = b;
        }
    }

    #[test]
    fn covering_examples() {
        let e = 1.0 / std::f64::consts::E;
        assert!((covering_log_bound(1.0, 1.0, 1.0, 1.0, e, 1.0).unwrap() - 1.0).abs() < 1e-15);
        let a = covering_log_bound(3.0, 2.0, 4.0, 1.5, 0.01, 50.0).unwrap();
        let b = covering_log_bound(6.0, 2.0, 4.0, 1.5, 0.01, 50.0).unwrap();
        assert!((b - 2.0 * a).abs() < 1e-12);
        assert!(covering_log_bound(1.0, 1.0, 1.0, 1.0, 1.5, 1.0).is_err());
    }

    #[test]
    fn theta_examples() {
        let v = theta_n(&Schedule::affine(), 1e-2, 1.0 / 3.0, 1).unwrap();
        assert!((v - (1e-4f64 / 3.0 + 1e-4).sqrt()).abs() < 1e-15);
        assert!((v - 0.01155).abs() < 1e-5);
        let vp = theta_n(&Schedule::variance_preserving(), 1e-4, 1.0 / 3.0, 1).unwrap();
        assert!((vp - 0.01).abs() < 1e-4);
        let pl = Schedule::power_law(1.0, 0.75, 0.5, 1.0).unwrap();
        assert!(theta_n(&pl, 1e-8, 1.0, 2).unwrap() < 1e-5);
    }

    #[test]
    fn stopping_exponent() {
        assert_eq!(min_stopping_exponent(1.0, 0.5, 1.0), 4.0);
    }
}
