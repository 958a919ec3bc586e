//! Mean/variance schedules `(m_t, σ_t)` in reverse time.
//!
//! Reverse time `t = 1 − τ` puts the data at `t = 0` and the Gaussian source at
//! `t = 1`. A schedule defines the conditional law `N(m_t y, σ_t² I)` of the
//! path point given a data point `y`; the derivatives returned by [`Schedule::eval`]
//! are taken with respect to reverse time.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `m′` of the variance-preserving pair is singular at `t = 1`; it is evaluated
/// at this distance from the endpoint instead.
pub const VP_ENDPOINT_GUARD: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    /// `σ_t = t`, `m_t = 1 − t`.
    Affine,
    /// `σ_t = √t`, `m_t = √(1 − t)`.
    VariancePreserving,
    /// `σ_t = b₀ t^κ`, `1 − m_t = b̃₀ t^κ̃`.
    PowerLaw,
}

/// A validated schedule. Construct with [`Schedule::affine`],
/// [`Schedule::variance_preserving`] or [`Schedule::power_law`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ScheduleSpec", into = "ScheduleSpec")]
pub struct Schedule {
    family: Family,
    b0: f64,
    kappa: f64,
    btilde0: f64,
    kappatilde: f64,
}

/// Values of the schedule and its reverse-time derivatives at one `t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScheduleValue {
    pub sigma: f64,
    pub m: f64,
    pub dsigma: f64,
    pub dm: f64,
}

impl Schedule {
    pub fn affine() -> Self {
        Self {
            family: Family::Affine,
            b0: 1.0,
            kappa: 1.0,
            btilde0: 1.0,
            kappatilde: 1.0,
        }
    }

    pub fn variance_preserving() -> Self {
        // 1 − √(1 − t) = t/2 + O(t²)
        Self {
            family: Family::VariancePreserving,
            b0: 1.0,
            kappa: 0.5,
            btilde0: 0.5,
            kappatilde: 1.0,
        }
    }

    pub fn power_law(b0: f64, kappa: f64, btilde0: f64, kappatilde: f64) -> Result<Self> {
        if !(b0 > 0.0 && b0.is_finite()) {
            return Err(Error::Parameter(format!("b0 must be positive, got {b0}")));
        }
        if !(kappa >= 0.5 && kappa.is_finite()) {
            return Err(Error::Parameter(format!(
                "kappa must be at least 1/2, got {kappa}"
            )));
        }
        if !(btilde0 > 0.0 && btilde0 <= 1.0) {
            return Err(Error::Parameter(format!(
                "btilde0 must lie in (0, 1] so that m_t stays nonnegative, got {btilde0}"
            )));
        }
        if !(kappatilde > 0.0 && kappatilde.is_finite()) {
            return Err(Error::Parameter(format!(
                "kappatilde must be positive, got {kappatilde}"
            )));
        }
        Ok(Self {
            family: Family::PowerLaw,
            b0,
            kappa,
            btilde0,
            kappatilde,
        })
    }

    pub fn family(&self) -> Family {
        self.family
    }

    /// Exponent of `σ_t` near `t = 0`.
    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    /// Exponent of `1 − m_t` near `t = 0`.
    pub fn kappa_tilde(&self) -> f64 {
        self.kappatilde
    }

    pub fn b0(&self) -> f64 {
        self.b0
    }

    pub fn btilde0(&self) -> f64 {
        self.btilde0
    }

    /// Whether `m′_t` diverges as `t → 1`.
    pub fn singular_at_source(&self) -> bool {
        self.family == Family::VariancePreserving
    }

    /// Short identifier used in file names and reports.
    pub fn id(&self) -> String {
        match self.family {
            Family::Affine => "affine".into(),
            Family::VariancePreserving => "vp".into(),
            Family::PowerLaw => format!(
                "power_b{}_k{}_bt{}_kt{}",
                self.b0, self.kappa, self.btilde0, self.kappatilde
            ),
        }
    }

    pub fn eval(&self, t: f64) -> Result<ScheduleValue> {
        if !(t > 0.0 && t <= 1.0) {
            return Err(Error::Domain(format!("schedule time must lie in (0, 1], got {t}")));
        }
        Ok(self.eval_unchecked(t))
    }

    pub(crate) fn eval_unchecked(&self, t: f64) -> ScheduleValue {
        match self.family {
            Family::Affine => ScheduleValue {
                sigma: t,
                m: 1.0 - t,
                dsigma: 1.0,
                dm: -1.0,
            },
            Family::VariancePreserving => {
                let sigma = t.sqrt();
                let m = (1.0 - t).max(0.0).sqrt();
                let guarded = t.min(1.0 - VP_ENDPOINT_GUARD);
                ScheduleValue {
                    sigma,
                    m,
                    dsigma: 0.5 / sigma,
                    dm: -0.5 / (1.0 - guarded).sqrt(),
                }
            }
            Family::PowerLaw => {
                let sigma = self.b0 * t.powf(self.kappa);
                let gap = self.btilde0 * t.powf(self.kappatilde);
                ScheduleValue {
                    sigma,
                    m: 1.0 - gap,
                    dsigma: self.kappa * sigma / t,
                    dm: -self.kappatilde * gap / t,
                }
            }
        }
    }

    /// Forward-time view `(σ_[τ], m_[τ], dσ/dτ, dm/dτ)` at `τ = 1 − t`.
    pub fn eval_forward(&self, tau: f64) -> Result<ScheduleValue> {
        let v = self.eval(reverse_time(tau))?;
        Ok(ScheduleValue {
            dsigma: -v.dsigma,
            dm: -v.dm,
            ..v
        })
    }

    /// Numerical check of the schedule assumptions on `grid`.
    pub fn validate(&self, grid: &[f64]) -> ValidationReport {
        let mut violations = Vec::new();
        let mut pts: Vec<(f64, ScheduleValue)> = Vec::with_capacity(grid.len());
        for &t in grid {
            match self.eval(t) {
                Ok(v) => pts.push((t, v)),
                Err(e) => violations.push(format!("t = {t}: {e}")),
            }
        }
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        if pts.is_empty() {
            violations.push("empty validation grid".into());
            return ValidationReport {
                d0: f64::NAN,
                min_power: f64::NAN,
                max_power: f64::NAN,
                max_derivative: f64::NAN,
                derivative_energy: f64::NAN,
                sigma_monotone: false,
                m_monotone: false,
                violations,
            };
        }
        let power = |v: &ScheduleValue| v.sigma * v.sigma + v.m * v.m;
        let min_power = pts.iter().map(|(_, v)| power(v)).fold(f64::INFINITY, f64::min);
        let max_power = pts.iter().map(|(_, v)| power(v)).fold(0.0, f64::max);
        let max_derivative = pts
            .iter()
            .map(|(_, v)| v.dsigma.abs() + v.dm.abs())
            .fold(0.0, f64::max);
        let derivative_energy = pts
            .windows(2)
            .map(|w| {
                let e = |v: &ScheduleValue| v.dsigma * v.dsigma + v.dm * v.dm;
                0.5 * (w[1].0 - w[0].0) * (e(&w[0].1) + e(&w[1].1))
            })
            .sum();
        let sigma_monotone = pts.windows(2).all(|w| w[1].1.sigma >= w[0].1.sigma);
        let m_monotone = pts.windows(2).all(|w| w[1].1.m <= w[0].1.m);
        if !sigma_monotone {
            violations.push("sigma is not nondecreasing in t".into());
        }
        if !m_monotone {
            violations.push("m is not nonincreasing in t".into());
        }
        for (t, v) in &pts {
            if *t < 1.0 && !(v.sigma > 0.0 && v.m > 0.0 && v.m <= 1.0) {
                violations.push(format!("t = {t}: sigma = {}, m = {} out of range", v.sigma, v.m));
            }
        }
        ValidationReport {
            d0: max_power.max(1.0 / min_power),
            min_power,
            max_power,
            max_derivative,
            derivative_energy,
            sigma_monotone,
            m_monotone,
            violations,
        }
    }
}

impl fmt::Display for Schedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.id())
    }
}

/// Reverse time from forward time.
pub fn reverse_time(tau: f64) -> f64 {
    1.0 - tau
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    /// Smallest `D₀` with `D₀⁻¹ ≤ σ² + m² ≤ D₀` on the grid.
    pub d0: f64,
    pub min_power: f64,
    pub max_power: f64,
    /// `max |σ′| + |m′|` on the grid.
    pub max_derivative: f64,
    /// Trapezoid estimate of `∫ (σ′)² + (m′)² dt` over the grid span.
    pub derivative_energy: f64,
    pub sigma_monotone: bool,
    pub m_monotone: bool,
    pub violations: Vec<String>,
}

impl ValidationReport {
    /// Smallest `K₀` with `max |σ′| + |m′| ≤ N^{K₀}` for basis count `n_basis > 1`.
    pub fn derivative_exponent(&self, n_basis: f64) -> f64 {
        (self.max_derivative.ln() / n_basis.ln()).max(0.0)
    }
}

/// Config-file form of a schedule.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScheduleSpec {
    pub family: Family,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub btilde0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappatilde: Option<f64>,
}

impl TryFrom<ScheduleSpec> for Schedule {
    type Error = Error;

    fn try_from(spec: ScheduleSpec) -> Result<Self> {
        let fixed = match spec.family {
            Family::Affine => Some(Schedule::affine()),
            Family::VariancePreserving => Some(Schedule::variance_preserving()),
            Family::PowerLaw => None,
        };
        match fixed {
            Some(s) => {
                let given = [
                    ("b0", spec.b0, s.b0),
                    ("kappa", spec.kappa, s.kappa),
                    ("btilde0", spec.btilde0, s.btilde0),
                    ("kappatilde", spec.kappatilde, s.kappatilde),
                ];
                for (name, value, expected) in given {
                    if let Some(v) = value {
                        if v != expected {
                            return Err(Error::Parameter(format!(
                                "{name} = {v} conflicts with the {:?} family ({expected})",
                                spec.family
                            )));
                        }
                    }
                }
                Ok(s)
            }
            None => {
                let need = |name: &str, v: Option<f64>| {
                    v.ok_or_else(|| Error::Parameter(format!("power_law schedule needs `{name}`")))
                };
                Schedule::power_law(
                    need("b0", spec.b0)?,
                    need("kappa", spec.kappa)?,
                    need("btilde0", spec.btilde0)?,
                    need("kappatilde", spec.kappatilde)?,
                )
            }
        }
    }
}

impl From<Schedule> for ScheduleSpec {
    fn from(s: Schedule) -> Self {
        ScheduleSpec {
            family: s.family,
            b0: Some(s.b0),
            kappa: Some(s.kappa),
            btilde0: Some(s.btilde0),
            kappatilde: Some(s.kappatilde),
        }
    }
}
