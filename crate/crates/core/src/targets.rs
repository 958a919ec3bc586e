//! Synthetic ground-truth densities on `[-1, 1]^d`.
//!
//! Every target is bounded above and below on the cube, vanishes outside it,
//! and is constant on a boundary collar of width [`COLLAR`]. Densities are
//! piecewise polynomial with known breakpoints, so Gauss–Legendre panels give
//! exact integrals and the one-dimensional CDF is exact up to rounding.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::bspline::eval_cardinal;
use crate::error::{Error, Result};
use crate::points::Points;
use crate::quadrature::GaussLegendre;
use crate::rng::substream;

/// Width of the constant boundary collar.
pub const COLLAR: f64 = 0.1;
const SPLINE_ORDER: usize = 3;
const MAX_BUMP_POWER: u32 = 7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetKind {
    Uniform,
    /// Constant plus a tensor cubic B-spline expansion supported inside the collar.
    SplineMixture,
    /// Uniform times `1 + Σ a_k Π g((x_i − c_ki)/r_k)` with odd polynomial bumps
    /// `g(u) ∝ u (1 − u²)^m`.
    PerturbedUniform,
}

/// Config-file description of a target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetSpec {
    pub kind: TargetKind,
    pub dim: usize,
    /// Declared smoothness label; defaults to the construction's natural value.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub smoothness: Option<f64>,
    /// Explicit coefficients (spline: `basis_count^dim` values, perturbed: amplitudes).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coefficients: Option<Vec<f64>>,
    /// Seed for generated coefficients when none are given.
    #[serde(default)]
    pub seed: u64,
    /// Spline functions per axis, or number of bumps.
    #[serde(default = "default_basis_count")]
    pub basis_count: usize,
    /// Maximum perturbation relative to the constant part, in `(0, 0.9]`.
    #[serde(default = "default_amplitude")]
    pub amplitude: f64,
    /// Mirror the construction so that `p(−x) = p(x)`.
    #[serde(default)]
    pub symmetric: bool,
    /// Bump exponent `m` for the perturbed kind.
    #[serde(default = "default_bump_power")]
    pub bump_power: u32,
}

fn default_basis_count() -> usize {
    8
}
fn default_amplitude() -> f64 {
    0.6
}
fn default_bump_power() -> u32 {
    3
}

impl TargetSpec {
    pub fn new(kind: TargetKind, dim: usize) -> Self {
        Self {
            kind,
            dim,
            smoothness: None,
            coefficients: None,
            seed: 0,
            basis_count: default_basis_count(),
            amplitude: default_amplitude(),
            symmetric: false,
            bump_power: default_bump_power(),
        }
    }

    pub fn build(&self) -> Result<TargetDensity> {
        TargetDensity::from_spec(self)
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Bump {
    center: Vec<f64>,
    radius: f64,
    amplitude: f64,
}

#[derive(Debug, Clone, PartialEq)]
enum Shape {
    Uniform,
    Spline {
        /// Left end of the first basis support.
        origin: f64,
        width: f64,
        per_axis: usize,
        base: f64,
        coefficients: Vec<f64>,
    },
    Perturbed {
        bumps: Vec<Bump>,
        power: u32,
        /// `1 / max |u (1 − u²)^m|`
        scale: f64,
    },
}

/// A samplable, evaluable density on `[-1, 1]^d`.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetDensity {
    dim: usize,
    kind: TargetKind,
    smoothness: f64,
    c0: f64,
    upper: f64,
    norm: f64,
    shape: Shape,
}

impl TargetDensity {
    pub fn uniform(dim: usize) -> Result<Self> {
        TargetSpec::new(TargetKind::Uniform, dim).build()
    }

    pub fn from_spec(spec: &TargetSpec) -> Result<Self> {
        let dim = spec.dim;
        if dim == 0 {
            return Err(Error::Parameter("target dimension must be positive".into()));
        }
        if !(spec.amplitude > 0.0 && spec.amplitude <= 0.9) {
            return Err(Error::Parameter(format!(
                "amplitude must lie in (0, 0.9], got {}",
                spec.amplitude
            )));
        }
        let vol = 2f64.powi(dim as i32);
        match spec.kind {
            TargetKind::Uniform => Ok(Self {
                dim,
                kind: TargetKind::Uniform,
                smoothness: spec.smoothness.unwrap_or(f64::INFINITY),
                c0: vol.max(1.0 / vol),
                upper: 1.0 / vol,
                norm: 1.0,
                shape: Shape::Uniform,
            }),
            TargetKind::SplineMixture => {
                let m = spec.basis_count;
                if m == 0 {
                    return Err(Error::Parameter("basis_count must be positive".into()));
                }
                let total = m.pow(dim as u32);
                let base = 1.0;
                let mut coefficients = match &spec.coefficients {
                    Some(c) => {
                        if c.len() != total {
                            return Err(Error::Size(format!(
                                "spline target needs {total} coefficients, got {}",
                                c.len()
                            )));
                        }
                        c.clone()
                    }
                    None => {
                        let mut rng = substream(spec.seed, 0);
                        (0..total)
                            .map(|_| spec.amplitude * base * (2.0 * rng.random::<f64>() - 1.0))
                            .collect()
                    }
                };
                if spec.symmetric {
                    symmetrize_grid(&mut coefficients, m, dim);
                }
                let max_coef = coefficients.iter().fold(0.0f64, |a, c| a.max(c.abs()));
                if max_coef >= base {
                    return Err(Error::Parameter(format!(
                        "spline coefficients must stay below the constant part ({base}), max is {max_coef}"
                    )));
                }
                let origin = -1.0 + COLLAR;
                let width = (2.0 - 2.0 * COLLAR) / (m + SPLINE_ORDER) as f64;
                // each tensor basis integrates to width^dim
                let norm = base * vol + coefficients.iter().sum::<f64>() * width.powi(dim as i32);
                let lo = (base - max_coef) / norm;
                let hi = (base + max_coef) / norm;
                Ok(Self {
                    dim,
                    kind: TargetKind::SplineMixture,
                    smoothness: spec.smoothness.unwrap_or(SPLINE_ORDER as f64),
                    c0: hi.max(1.0 / lo),
                    upper: hi,
                    norm,
                    shape: Shape::Spline {
                        origin,
                        width,
                        per_axis: m,
                        base,
                        coefficients,
                    },
                })
            }
            TargetKind::PerturbedUniform => {
                let power = spec.bump_power;
                if !(1..=MAX_BUMP_POWER).contains(&power) {
                    return Err(Error::Parameter(format!(
                        "bump_power must lie in 1..={MAX_BUMP_POWER}, got {power}"
                    )));
                }
                let mut rng = substream(spec.seed, 1);
                let amplitudes: Vec<f64> = match &spec.coefficients {
                    Some(a) => a.clone(),
                    None => (0..spec.basis_count)
                        .map(|_| 2.0 * rng.random::<f64>() - 1.0)
                        .collect(),
                };
                let mut bumps: Vec<Bump> = amplitudes
                    .iter()
                    .map(|&a| {
                        let radius = 0.2 + 0.3 * rng.random::<f64>();
                        let reach = 1.0 - COLLAR - radius;
                        let center = (0..dim)
                            .map(|_| reach * (2.0 * rng.random::<f64>() - 1.0))
                            .collect();
                        Bump {
                            center,
                            radius,
                            amplitude: a,
                        }
                    })
                    .collect();
                if spec.symmetric {
                    let sign = if dim.is_multiple_of(2) { 1.0 } else { -1.0 };
                    let mirrored: Vec<Bump> = bumps
                        .iter()
                        .map(|b| Bump {
                            center: b.center.iter().map(|c| -c).collect(),
                            radius: b.radius,
                            amplitude: sign * b.amplitude,
                        })
                        .collect();
                    bumps.extend(mirrored);
                }
                let total: f64 = bumps.iter().map(|b| b.amplitude.abs()).sum();
                if total > 0.0 {
                    let rescale = if spec.coefficients.is_some() && total <= spec.amplitude {
                        1.0
                    } else {
                        spec.amplitude / total
                    };
                    for b in &mut bumps {
                        b.amplitude *= rescale;
                    }
                }
                let total: f64 = bumps.iter().map(|b| b.amplitude.abs()).sum();
                let u = 1.0 / (2.0 * power as f64 + 1.0).sqrt();
                let scale = 1.0 / (u * (1.0 - u * u).powi(power as i32));
                let lo = (1.0 - total) / vol;
                let hi = (1.0 + total) / vol;
                Ok(Self {
                    dim,
                    kind: TargetKind::PerturbedUniform,
                    smoothness: spec.smoothness.unwrap_or(power as f64),
                    c0: hi.max(1.0 / lo),
                    upper: hi,
                    norm: 1.0,
                    shape: Shape::Perturbed {
                        bumps,
                        power,
                        scale,
                    },
                })
            }
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kind(&self) -> TargetKind {
        self.kind
    }

    /// Declared smoothness index `s`.
    pub fn smoothness(&self) -> f64 {
        self.smoothness
    }

    /// Density bound: `c0⁻¹ ≤ p ≤ c0` on the cube.
    pub fn c0(&self) -> f64 {
        self.c0
    }

    pub fn pdf(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.dim);
        if x.iter().any(|v| !(-1.0..=1.0).contains(v)) {
            return 0.0;
        }
        match &self.shape {
            Shape::Uniform => 1.0 / 2f64.powi(self.dim as i32),
            Shape::Spline {
                origin,
                width,
                per_axis,
                base,
                coefficients,
            } => {
                // nonzero 1D factors per axis: (index, value)
                let mut factors: Vec<[(usize, f64); SPLINE_ORDER + 1]> = Vec::with_capacity(self.dim);
                for &xi in x {
                    let u = (xi - origin) / width;
                    let mut f = [(0usize, 0.0f64); SPLINE_ORDER + 1];
                    let top = u.floor() as i64;
                    for (slot, j) in ((top - SPLINE_ORDER as i64)..=top).enumerate() {
                        if j >= 0 && (j as usize) < *per_axis {
                            f[slot] = (j as usize, eval_cardinal(SPLINE_ORDER, u - j as f64));
                        }
                    }
                    factors.push(f);
                }
                let mut sum = 0.0;
                let mut idx = vec![0usize; self.dim];
                loop {
                    let mut flat = 0usize;
                    let mut value = 1.0;
                    for (axis, &slot) in idx.iter().enumerate() {
                        let (j, v) = factors[axis][slot];
                        flat = flat * per_axis + j;
                        value *= v;
                    }
                    if value != 0.0 {
                        sum += coefficients[flat] * value;
                    }
                    // odometer over the (order+1)^dim active combinations
                    let mut axis = self.dim;
                    loop {
                        if axis == 0 {
                            return (base + sum) / self.norm;
                        }
                        axis -= 1;
                        idx[axis] += 1;
                        if idx[axis] <= SPLINE_ORDER {
                            break;
                        }
                        idx[axis] = 0;
                    }
                }
            }
            Shape::Perturbed {
                bumps,
                power,
                scale,
            } => {
                let mut s = 1.0;
                for b in bumps {
                    let mut v = b.amplitude;
                    for (xi, ci) in x.iter().zip(&b.center) {
                        let u = (xi - ci) / b.radius;
                        if u.abs() >= 1.0 {
                            v = 0.0;
                            break;
                        }
                        v *= scale * u * (1.0 - u * u).powi(*power as i32);
                    }
                    s += v;
                }
                s / 2f64.powi(self.dim as i32)
            }
        }
    }

    /// Breakpoints along `axis` between which the density is polynomial.
    pub fn breakpoints(&self, axis: usize) -> Vec<f64> {
        let mut b = vec![-1.0, 1.0];
        match &self.shape {
            Shape::Uniform => {}
            Shape::Spline {
                origin,
                width,
                per_axis,
                ..
            } => {
                b.extend((0..=per_axis + SPLINE_ORDER).map(|i| origin + width * i as f64));
            }
            Shape::Perturbed { bumps, .. } => {
                for bump in bumps {
                    let c = bump.center[axis];
                    b.extend([c - bump.radius, c, c + bump.radius]);
                }
            }
        }
        b.retain(|v| (-1.0..=1.0).contains(v));
        b.sort_by(f64::total_cmp);
        b.dedup_by(|a, b| (*a - *b).abs() < 1e-14);
        b
    }

    /// `∫ f(x) p(x) dx` by tensor Gauss–Legendre on the polynomial panels (`d ≤ 2`).
    pub fn expectation<F: Fn(&[f64]) -> f64>(&self, f: F, nodes: usize) -> Result<f64> {
        let rule = GaussLegendre::new(nodes);
        match self.dim {
            1 => Ok(rule.integrate_panels(|x| f(&[x]) * self.pdf(&[x]), &self.breakpoints(0))),
            2 => {
                let (bx, by) = (self.breakpoints(0), self.breakpoints(1));
                Ok(rule.integrate_panels(
                    |x| rule.integrate_panels(|y| f(&[x, y]) * self.pdf(&[x, y]), &by),
                    &bx,
                ))
            }
            d => Err(Error::Dimension { expected: 2, got: d }),
        }
    }

    /// Total mass by quadrature; 1 up to rounding.
    pub fn mass(&self) -> Result<f64> {
        self.expectation(|_| 1.0, 8)
    }

    /// `V = ∫ ‖x‖² p(x) dx`.
    pub fn second_moment(&self) -> Result<f64> {
        match &self.shape {
            Shape::Uniform => Ok(self.dim as f64 / 3.0),
            _ => self.expectation(|x| x.iter().map(|v| v * v).sum(), 12),
        }
    }

    /// Marginal density of coordinate `axis` at `x`.
    pub fn marginal_pdf(&self, axis: usize, x: f64) -> f64 {
        if self.dim == 1 {
            return self.pdf(&[x]);
        }
        if self.dim != 2 {
            unimplemented!("marginals are only provided for d <= 2");
        }
        let rule = GaussLegendre::new(8);
        let other = 1 - axis;
        rule.integrate_panels(
            |y| {
                let mut p = [0.0; 2];
                p[axis] = x;
                p[other] = y;
                self.pdf(&p)
            },
            &self.breakpoints(other),
        )
    }

    /// Marginal CDF of coordinate `axis`.
    pub fn marginal_cdf(&self, axis: usize, x: f64) -> f64 {
        if x <= -1.0 {
            return 0.0;
        }
        if x >= 1.0 {
            return 1.0;
        }
        let rule = GaussLegendre::new(8);
        let mut breaks: Vec<f64> = self.breakpoints(axis).into_iter().filter(|&b| b < x).collect();
        breaks.push(x);
        rule.integrate_panels(|y| self.marginal_pdf(axis, y), &breaks).clamp(0.0, 1.0)
    }

    /// Exact sampler: inverse CDF for `d = 1`, rejection from the uniform
    /// proposal for `d ≥ 2`. Deterministic in `(seed, n)`.
    pub fn sample(&self, seed: u64, n: usize) -> Result<Points> {
        if n == 0 {
            return Err(Error::Parameter("sample size must be positive".into()));
        }
        let mut rng = substream(seed, 0x7a26);
        if self.dim == 1 {
            let cdf = self.cdf_table()?;
            let xs = (0..n)
                .map(|_| cdf.quantile(self, rng.random::<f64>()))
                .collect();
            return Ok(Points::from_scalars(xs));
        }
        let mut coords = Vec::with_capacity(n * self.dim);
        let mut x = vec![0.0; self.dim];
        let (mut accepted, mut tries) = (0usize, 0u64);
        while accepted < n {
            for v in x.iter_mut() {
                *v = 2.0 * rng.random::<f64>() - 1.0;
            }
            tries += 1;
            if rng.random::<f64>() * self.upper < self.pdf(&x) {
                coords.extend_from_slice(&x);
                accepted += 1;
            }
            if tries >= 1_000_000 && (accepted as f64) < 1e-4 * tries as f64 {
                return Err(Error::Sampler {
                    rate: accepted as f64 / tries as f64,
                    tries,
                });
            }
        }
        Points::new(self.dim, coords)
    }

    /// Tabulated CDF for one-dimensional targets.
    pub fn cdf_table(&self) -> Result<CdfTable> {
        if self.dim != 1 {
            return Err(Error::Dimension {
                expected: 1,
                got: self.dim,
            });
        }
        let rule = GaussLegendre::new(8);
        let breaks = self.breakpoints(0);
        let mut cumulative = vec![0.0];
        for w in breaks.windows(2) {
            let m = rule.integrate(|x| self.pdf(&[x]), w[0], w[1]);
            cumulative.push(cumulative.last().unwrap() + m);
        }
        Ok(CdfTable {
            rule,
            breaks,
            cumulative,
        })
    }
}

/// Piecewise-exact CDF of a one-dimensional target.
#[derive(Debug, Clone)]
pub struct CdfTable {
    rule: GaussLegendre,
    breaks: Vec<f64>,
    cumulative: Vec<f64>,
}

impl CdfTable {
    pub fn cdf(&self, target: &TargetDensity, x: f64) -> f64 {
        if x <= self.breaks[0] {
            return 0.0;
        }
        if x >= *self.breaks.last().unwrap() {
            return 1.0;
        }
        let k = self.breaks.partition_point(|&b| b <= x) - 1;
        let partial = self.rule.integrate(|y| target.pdf(&[y]), self.breaks[k], x);
        (self.cumulative[k] + partial).clamp(0.0, 1.0)
    }

    /// Inverse CDF by safeguarded Newton iteration within one panel.
    pub fn quantile(&self, target: &TargetDensity, u: f64) -> f64 {
        let total = *self.cumulative.last().unwrap();
        let u = (u * total).clamp(0.0, total);
        let k = (self.cumulative.partition_point(|&c| c <= u).max(1) - 1).min(self.breaks.len() - 2);
        let (mut lo, mut hi) = (self.breaks[k], self.breaks[k + 1]);
        let base = self.cumulative[k];
        let mass = |x: f64| base + self.rule.integrate(|y| target.pdf(&[y]), self.breaks[k], x);
        let mut x = 0.5 * (lo + hi);
        for _ in 0..100 {
            let f = mass(x) - u;
            if f > 0.0 {
                hi = x;
            } else {
                lo = x;
            }
            if f.abs() < 1e-15 || hi - lo < 1e-15 {
                break;
            }
            let p = target.pdf(&[x]);
            let newton = x - f / p;
            x = if p > 0.0 && newton > lo && newton < hi {
                newton
            } else {
                0.5 * (lo + hi)
            };
        }
        x
    }
}

/// Makes a flattened `m^dim` coefficient grid invariant under `j ↦ m − 1 − j` on every axis.
fn symmetrize_grid(c: &mut [f64], m: usize, dim: usize) {
    let total = c.len();
    let mirror = |flat: usize| {
        let mut rest = flat;
        let mut out = 0usize;
        let mut mul = 1usize;
        for _ in 0..dim {
            let j = rest % m;
            rest /= m;
            out += (m - 1 - j) * mul;
            mul *= m;
        }
        out
    };
    for i in 0..total {
        let j = mirror(i);
        if j > i {
            let avg = 0.5 * (c[i] + c[j]);
            c[i] = avg;
            c[j] = avg;
        }
    }
}
