//! Cardinal and tensor-product B-splines, least-squares fitting, and
//! Gaussian-smoothed basis integrals.
//!
//! `𝒩_ℓ` is the `(ℓ+1)`-fold self-convolution of the indicator of `[0, 1]`,
//! supported on `[0, ℓ+1]`. The tensor basis is
//! `M_{k,j}(x) = Π_i 𝒩_ℓ(2^{k_i} x_i − j_i)`.

use std::f64::consts::PI;
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::{adaptive, GaussLegendre};
use crate::stats::{loglog_fit, LinearFit};

const MAX_ORDER: usize = 15;
const CONDITION_LIMIT: f64 = 1e12;

/// `𝒩_ℓ(x)` by the standard recurrence
/// `ℓ 𝒩_ℓ(x) = x 𝒩_{ℓ−1}(x) + (ℓ + 1 − x) 𝒩_{ℓ−1}(x − 1)`.
pub fn eval_cardinal(order: usize, x: f64) -> f64 {
    assert!(order <= MAX_ORDER, "cardinal B-spline order {order} is too large");
    if !(0.0..order as f64 + 1.0).contains(&x) {
        return 0.0;
    }
    let mut vals = [0.0f64; MAX_ORDER + 1];
    for (i, v) in vals.iter_mut().enumerate().take(order + 1) {
        let y = x - i as f64;
        *v = if (0.0..1.0).contains(&y) { 1.0 } else { 0.0 };
    }
    for k in 1..=order {
        let kf = k as f64;
        for i in 0..=(order - k) {
            let y = x - i as f64;
            vals[i] = (y * vals[i] + (kf + 1.0 - y) * vals[i + 1]) / kf;
        }
    }
    vals[0]
}

/// Identifies one tensor basis function `M_{k,j}` of order `ℓ`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SplineBasisIndex {
    pub order: usize,
    pub level: Vec<u32>,
    pub shift: Vec<i64>,
}

impl SplineBasisIndex {
    pub fn new(order: usize, level: Vec<u32>, shift: Vec<i64>) -> Result<Self> {
        if order == 0 || order > MAX_ORDER {
            return Err(Error::Parameter(format!("order must lie in 1..={MAX_ORDER}")));
        }
        if level.len() != shift.len() || level.is_empty() {
            return Err(Error::Dimension {
                expected: level.len(),
                got: shift.len(),
            });
        }
        Ok(Self { order, level, shift })
    }

    pub fn dim(&self) -> usize {
        self.level.len()
    }

    /// Support box `Π_i [2^{−k_i} j_i, 2^{−k_i}(j_i + ℓ + 1)]`.
    pub fn support(&self) -> Vec<(f64, f64)> {
        self.level
            .iter()
            .zip(&self.shift)
            .map(|(&k, &j)| {
                let h = 0.5f64.powi(k as i32);
                (h * j as f64, h * (j + self.order as i64 + 1) as f64)
            })
            .collect()
    }

    /// `∫ M_{k,j} = 2^{−Σ k_i}`.
    pub fn mass(&self) -> f64 {
        0.5f64.powi(self.level.iter().sum::<u32>() as i32)
    }

    fn knots(&self, axis: usize) -> Vec<f64> {
        let h = 0.5f64.powi(self.level[axis] as i32);
        (0..=self.order as i64 + 1)
            .map(|i| h * (self.shift[axis] + i) as f64)
            .collect()
    }

    fn factor(&self, axis: usize, y: f64) -> f64 {
        eval_cardinal(
            self.order,
            2f64.powi(self.level[axis] as i32) * y - self.shift[axis] as f64,
        )
    }
}

/// `M_{k,j}(x)`; zero outside the support box.
pub fn eval_tensor(idx: &SplineBasisIndex, x: &[f64]) -> f64 {
    debug_assert_eq!(x.len(), idx.dim());
    let mut v = 1.0;
    for (axis, &xi) in x.iter().enumerate() {
        v *= idx.factor(axis, xi);
        if v == 0.0 {
            return 0.0;
        }
    }
    v
}

/// Which basis functions a fit may use.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum LevelAllocation {
    /// Every function of the coarsest single level with at least `N` functions.
    SingleFine,
    /// All functions of levels `0..=coarse`, then `⌈N 2^{−ν(k−coarse)}⌉`
    /// functions at each finer level up to `finest`, chosen where the coarse
    /// residual carries the most energy.
    MultiLevel { coarse: u32, finest: u32, nu: f64 },
}

/// A finite expansion `Σ α M_{k,j}`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SplineApproximant {
    pub terms: Vec<(SplineBasisIndex, f64)>,
    /// Discrete weighted L² residual on the fitting quadrature.
    pub residual: f64,
    pub condition: f64,
    pub warnings: Vec<String>,
}

impl SplineApproximant {
    pub fn basis_count(&self) -> usize {
        self.terms.len()
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.terms.iter().map(|(i, a)| a * eval_tensor(i, x)).sum()
    }

    pub fn max_coefficient(&self) -> f64 {
        self.terms.iter().fold(0.0, |m, (_, a)| m.max(a.abs()))
    }

    fn finest_level(&self) -> u32 {
        self.terms
            .iter()
            .flat_map(|(i, _)| i.level.iter().copied())
            .max()
            .unwrap_or(0)
    }
}

/// Shifts at level `k` whose support meets `(-1, 1)`.
fn shifts_at(level: u32, order: usize) -> std::ops::RangeInclusive<i64> {
    let two_k = 1i64 << level;
    (-two_k - order as i64)..=(two_k - 1)
}

fn per_axis_count(level: u32, order: usize) -> usize {
    (1usize << (level + 1)) + order
}

fn tensor_indices(order: usize, level: u32, dim: usize) -> Vec<SplineBasisIndex> {
    let shifts: Vec<i64> = shifts_at(level, order).collect();
    let mut out = Vec::with_capacity(shifts.len().pow(dim as u32));
    let mut cur = vec![0usize; dim];
    loop {
        out.push(SplineBasisIndex {
            order,
            level: vec![level; dim],
            shift: cur.iter().map(|&c| shifts[c]).collect(),
        });
        let mut axis = dim;
        loop {
            if axis == 0 {
                return out;
            }
            axis -= 1;
            cur[axis] += 1;
            if cur[axis] < shifts.len() {
                break;
            }
            cur[axis] = 0;
        }
    }
}

/// Tensor quadrature on `[-1, 1]^d` with panels at level-`level` knots.
struct Grid {
    points: Vec<Vec<f64>>,
    weights: Vec<f64>,
}

impl Grid {
    fn new(dim: usize, level: u32, nodes: usize) -> Self {
        let rule = GaussLegendre::new(nodes);
        let panels = 1usize << (level + 1);
        let h = 2.0 / panels as f64;
        let axis: Vec<(f64, f64)> = (0..panels)
            .flat_map(|p| {
                let a = -1.0 + h * p as f64;
                rule.mapped(a, a + h).collect::<Vec<_>>()
            })
            .collect();
        let mut points = Vec::new();
        let mut weights = Vec::new();
        let mut cur = vec![0usize; dim];
        'outer: loop {
            points.push(cur.iter().map(|&c| axis[c].0).collect());
            weights.push(cur.iter().map(|&c| axis[c].1).product());
            let mut d = dim;
            loop {
                if d == 0 {
                    break 'outer;
                }
                d -= 1;
                cur[d] += 1;
                if cur[d] < axis.len() {
                    break;
                }
                cur[d] = 0;
            }
        }
        Self { points, weights }
    }
}

/// Least-squares fit of `f` on `[-1, 1]^dim` (`dim ≤ 2`) with about `n_basis`
/// functions of the given order.
pub fn fit<F: Fn(&[f64]) -> f64>(
    f: F,
    dim: usize,
    n_basis: usize,
    order: usize,
    allocation: LevelAllocation,
) -> Result<SplineApproximant> {
    if !(1..=2).contains(&dim) {
        return Err(Error::Dimension { expected: 2, got: dim });
    }
    if n_basis == 0 {
        return Err(Error::Parameter("basis count must be positive".into()));
    }
    if order == 0 || order > MAX_ORDER {
        return Err(Error::Parameter(format!("order must lie in 1..={MAX_ORDER}")));
    }
    let nodes = order + 3;
    match allocation {
        LevelAllocation::SingleFine => {
            let per_axis = (n_basis as f64).powf(1.0 / dim as f64).ceil() as usize;
            let mut level = 0u32;
            while per_axis_count(level, order) < per_axis {
                level += 1;
            }
            let dict = tensor_indices(order, level, dim);
            let grid = Grid::new(dim, level, nodes);
            solve(&f, dict, &grid)
        }
        LevelAllocation::MultiLevel { coarse, finest, nu } => {
            if finest < coarse {
                return Err(Error::Parameter("finest level must not be below the coarse level".into()));
            }
            let grid = Grid::new(dim, finest, nodes);
            let mut dict: Vec<SplineBasisIndex> =
                (0..=coarse).flat_map(|k| tensor_indices(order, k, dim)).collect();
            let coarse_fit = solve(&f, dict.clone(), &grid)?;
            let resid: Vec<f64> = grid
                .points
                .iter()
                .map(|x| f(x) - coarse_fit.eval(x))
                .collect();
            for k in (coarse + 1)..=finest {
                let budget = (n_basis as f64 * 2f64.powf(-nu * (k - coarse) as f64)).ceil() as usize;
                let mut scored: Vec<(f64, SplineBasisIndex)> = tensor_indices(order, k, dim)
                    .into_iter()
                    .map(|idx| {
                        let energy: f64 = grid
                            .points
                            .iter()
                            .zip(&grid.weights)
                            .zip(&resid)
                            .map(|((x, w), r)| {
                                if eval_tensor(&idx, x) > 0.0 {
                                    w * r * r
                                } else {
                                    0.0
                                }
                            })
                            .sum();
                        (energy, idx)
                    })
                    .collect();
                scored.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(&b.1)));
                dict.extend(scored.into_iter().take(budget).map(|(_, i)| i));
            }
            solve(&f, dict, &grid)
        }
    }
}

fn solve<F: Fn(&[f64]) -> f64>(
    f: &F,
    dict: Vec<SplineBasisIndex>,
    grid: &Grid,
) -> Result<SplineApproximant> {
    let rows = grid.points.len();
    let cols = dict.len();
    if rows < cols {
        return Err(Error::Size(format!(
            "{rows} quadrature points cannot determine {cols} coefficients"
        )));
    }
    let sw: Vec<f64> = grid.weights.iter().map(|w| w.sqrt()).collect();
    let a = DMatrix::from_fn(rows, cols, |r, c| sw[r] * eval_tensor(&dict[c], &grid.points[r]));
    let b = DVector::from_iterator(rows, grid.points.iter().zip(&sw).map(|(x, w)| w * f(x)));
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    let condition = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    let mut warnings = Vec::new();
    if condition > CONDITION_LIMIT {
        warnings.push(format!(
            "ill-conditioned least-squares system (condition {condition:.3e}); minimum-norm solution returned"
        ));
    }
    let coef = svd
        .solve(&b, smax * 1e-13)
        .map_err(|e| Error::Degenerate(e.to_string()))?;
    let residual = (&a * &coef - &b).norm();
    Ok(SplineApproximant {
        terms: dict.into_iter().zip(coef.iter().copied()).collect(),
        residual,
        condition,
        warnings,
    })
}

/// `‖f − approx‖_{L²([-1,1]^d)}` on a quadrature finer than any fitting grid.
pub fn l2_error<F: Fn(&[f64]) -> f64>(f: F, approx: &SplineApproximant, dim: usize) -> f64 {
    let grid = Grid::new(dim, approx.finest_level() + 1, 10);
    grid.points
        .iter()
        .zip(&grid.weights)
        .map(|(x, w)| w * (f(x) - approx.eval(x)).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Which Gaussian-weighted integral of a basis function to compute.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SmoothedKind {
    /// `∫ M(y) φ_σ(x − m y) dy`
    Density,
    /// `∫ M(y) φ_σ(x − m y) (x − m y)/σ dy`
    WhitenedMoment,
    /// `∫ M(y) φ_σ(x − m y) y dy`
    MeanMoment,
}

const SMOOTHED_TOL: f64 = 1e-10;

/// Gaussian-smoothed basis integrals; `φ_σ` is the isotropic normal density.
/// The density kind returns one value, the moment kinds one value per axis.
pub fn smoothed_basis_integral(
    idx: &SplineBasisIndex,
    kind: SmoothedKind,
    m: f64,
    sigma: f64,
    x: &[f64],
) -> Result<Vec<f64>> {
    if !(sigma > 0.0) {
        return Err(Error::Domain(format!("sigma must be positive, got {sigma}")));
    }
    if x.len() != idx.dim() {
        return Err(Error::Dimension {
            expected: idx.dim(),
            got: x.len(),
        });
    }
    let d = idx.dim();
    let tol = SMOOTHED_TOL / (2 * d) as f64;
    let mut dens = Vec::with_capacity(d);
    let mut moment = Vec::with_capacity(d);
    for axis in 0..d {
        let xi = x[axis];
        let mut breaks = idx.knots(axis);
        let (lo, hi) = (breaks[0], *breaks.last().unwrap());
        if m > 0.0 {
            let c = xi / m;
            let w = sigma / m;
            for s in [0.0, -1.0, 1.0, -3.0, 3.0, -8.0, 8.0] {
                let b = c + s * w;
                if b > lo && b < hi {
                    breaks.push(b);
                }
            }
            breaks.sort_by(f64::total_cmp);
            breaks.dedup();
        }
        let rule = GaussLegendre::new(10);
        let phi = |y: f64| {
            let z = (xi - m * y) / sigma;
            (-0.5 * z * z).exp() / ((2.0 * PI).sqrt() * sigma)
        };
        let (v0, _) = adaptive(&rule, |y| idx.factor(axis, y) * phi(y), &breaks, tol)?;
        dens.push(v0);
        if kind != SmoothedKind::Density {
            let (v1, _) = match kind {
                SmoothedKind::WhitenedMoment => adaptive(
                    &rule,
                    |y| idx.factor(axis, y) * phi(y) * (xi - m * y) / sigma,
                    &breaks,
                    tol,
                )?,
                _ => adaptive(&rule, |y| idx.factor(axis, y) * phi(y) * y, &breaks, tol)?,
            };
            moment.push(v1);
        }
    }
    Ok(match kind {
        SmoothedKind::Density => vec![dens.iter().product()],
        _ => (0..d)
            .map(|i| {
                moment[i]
                    * dens
                        .iter()
                        .enumerate()
                        .filter(|&(l, _)| l != i)
                        .map(|(_, v)| v)
                        .product::<f64>()
            })
            .collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateRow {
    pub requested: usize,
    pub basis_count: usize,
    pub l2_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateSweep {
    pub rows: Vec<RateRow>,
    pub fit: LinearFit,
    pub smoothness_label: f64,
    pub dim: usize,
    /// Errors sit at the quadrature/rounding floor; the slope is meaningless.
    pub floor: bool,
}

impl RateSweep {
    /// The approximation-theory slope `−s/d`.
    pub fn predicted_slope(&self) -> f64 {
        -self.smoothness_label / self.dim as f64
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("requested_n,basis_count,l2_error\n");
        for r in &self.rows {
            let _ = writeln!(out, "{},{},{:e}", r.requested, r.basis_count, r.l2_error);
        }
        let _ = writeln!(
            out,
            "# slope={} stderr={} predicted={} floor={}",
            self.fit.slope,
            self.fit.slope_stderr,
            self.predicted_slope(),
            self.floor
        );
        out
    }
}

const FLOOR: f64 = 1e-11;

/// Fits `f` at each basis budget and regresses `log error` on `log N`.
pub fn rate_sweep<F: Fn(&[f64]) -> f64>(
    f: F,
    smoothness_label: f64,
    dim: usize,
    n_list: &[usize],
    order: usize,
) -> Result<RateSweep> {
    if n_list.len() < 3 || n_list.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Parameter(
            "rate sweep needs at least three strictly increasing basis counts".into(),
        ));
    }
    let mut rows = Vec::with_capacity(n_list.len());
    for &n in n_list {
        let approx = fit(&f, dim, n, order, LevelAllocation::SingleFine)?;
        let err = l2_error(&f, &approx, dim).max(f64::MIN_POSITIVE);
        rows.push(RateRow {
            requested: n,
            basis_count: approx.basis_count(),
            l2_error: err,
        });
    }
    let floor = rows.iter().all(|r| r.l2_error < FLOOR);
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .map(|r| (r.basis_count as f64, r.l2_error))
        .collect();
    let fit = loglog_fit(&pts)?;
    Ok(RateSweep {
        rows,
        fit,
        smoothness_label,
        dim,
        floor,
    })
}
