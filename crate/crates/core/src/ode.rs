//! Reverse-time ODE integration, pushforward sampling and flow-error bounds.

use std::io::Write;

use rand::Rng as _;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::field::{ConstantField, LinearField, VelocityField};
use crate::points::Points;
use crate::quadrature::GaussLegendre;
use crate::rng::substream;

/// Exponential weights are rejected once their exponent passes this value.
pub const MAX_EXPONENT: f64 = 700.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Euler,
    Rk4,
    AdaptiveRk45,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Spacing {
    Uniform,
    /// Equal steps in `ln t`.
    Logarithmic,
    /// Equal steps in `ln t` below `t = 1/2` and geometric steps in `1 − t`
    /// above it, refining toward `t = 1` where `m′_t` may blow up.
    GradedLogarithmic,
}

/// Gap to `t = 1` of the first graded step.
pub const GRADED_END_GAP: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FlowConfig {
    pub method: Method,
    pub steps: usize,
    /// Absolute and relative tolerance of the adaptive method.
    pub tolerance: f64,
    pub spacing: Spacing,
    pub t_start: f64,
    pub t_end: f64,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self {
            method: Method::Rk4,
            steps: 200,
            tolerance: 1e-6,
            spacing: Spacing::Logarithmic,
            t_start: 1.0,
            t_end: 1e-3,
        }
    }
}

impl FlowConfig {
    pub fn rk4(steps: usize, spacing: Spacing, t_end: f64) -> Self {
        Self {
            steps,
            spacing,
            t_end,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t_end > 0.0) {
            return Err(Error::Parameter(format!("t_end must be positive, got {}", self.t_end)));
        }
        if self.steps == 0 {
            return Err(Error::Parameter("steps must be at least 1".into()));
        }
        if self.method == Method::AdaptiveRk45 && !(self.tolerance > 0.0 && self.tolerance <= 1e-2) {
            return Err(Error::Parameter(format!(
                "adaptive tolerance must lie in (0, 1e-2], got {}",
                self.tolerance
            )));
        }
        if !self.t_start.is_finite() || self.t_start == self.t_end {
            return Err(Error::Parameter("t_start must be finite and differ from t_end".into()));
        }
        Ok(())
    }
}

/// Time grid from `from` to `to` (both included) with `steps` steps.
pub fn time_grid(spacing: Spacing, from: f64, to: f64, steps: usize) -> Result<Vec<f64>> {
    if steps == 0 {
        return Err(Error::Parameter("steps must be at least 1".into()));
    }
    let (a, b) = (from.min(to), from.max(to));
    let mut grid = match spacing {
        Spacing::Uniform => (0..=steps).map(|i| a + (b - a) * i as f64 / steps as f64).collect(),
        Spacing::Logarithmic => log_grid(a, b, steps)?,
        Spacing::GradedLogarithmic => graded_grid(a, b, steps)?,
    };
    grid[0] = a;
    *grid.last_mut().unwrap() = b;
    if from > to {
        grid.reverse();
    }
    Ok(grid)
}

fn log_grid(a: f64, b: f64, steps: usize) -> Result<Vec<f64>> {
    if !(a > 0.0) {
        return Err(Error::Domain(format!("logarithmic spacing needs positive times, got {a}")));
    }
    let (la, lb) = (a.ln(), b.ln());
    Ok((0..=steps)
        .map(|i| (la + (lb - la) * i as f64 / steps as f64).exp())
        .collect())
}

/// Points of `[a, b] ⊂ [c, 1]` geometric in the gap `1 − t`, ascending.
fn gap_grid(a: f64, b: f64, steps: usize) -> Vec<f64> {
    let g_hi = 1.0 - a;
    let g_end = 1.0 - b;
    let mut pts = Vec::with_capacity(steps + 1);
    if g_end >= GRADED_END_GAP || steps == 1 {
        let g_lo = g_end.max(GRADED_END_GAP.min(g_hi));
        for i in 0..=steps {
            pts.push(1.0 - g_hi * (g_lo / g_hi).powf(i as f64 / steps as f64));
        }
    } else {
        let k = steps - 1;
        for i in 0..=k {
            pts.push(1.0 - g_hi * (GRADED_END_GAP / g_hi).powf(i as f64 / k as f64));
        }
        pts.push(b);
    }
    pts
}

fn graded_grid(a: f64, b: f64, steps: usize) -> Result<Vec<f64>> {
    const SPLIT: f64 = 0.5;
    if b <= SPLIT {
        return log_grid(a, b, steps);
    }
    if a >= SPLIT || steps < 2 {
        if !(a > 0.0) {
            return Err(Error::Domain(format!("graded spacing needs positive times, got {a}")));
        }
        return Ok(gap_grid(a, b, steps));
    }
    let hi = (steps / 4).max(1);
    let mut pts = log_grid(a, SPLIT, steps - hi)?;
    pts.pop();
    pts.extend(gap_grid(SPLIT, b, hi));
    Ok(pts)
}

fn non_finite(t: f64, step: usize, x: &[f64]) -> Error {
    Error::NonFinite {
        t,
        step,
        sample: None,
        last: x.to_vec(),
    }
}

fn axpy(x: &[f64], h: f64, ks: &[(&[f64], f64)], out: &mut [f64]) {
    for (i, o) in out.iter_mut().enumerate() {
        *o = x[i] + h * ks.iter().map(|(k, c)| c * k[i]).sum::<f64>();
    }
}

fn fixed_step<V: VelocityField + ?Sized>(field: &V, method: Method, x: &mut [f64], t: f64, h: f64, scratch: &mut [Vec<f64>; 5]) {
    let [k1, k2, k3, k4, tmp] = scratch;
    field.velocity(x, t, k1);
    match method {
        Method::Euler => {
            for (xi, k) in x.iter_mut().zip(k1.iter()) {
                *xi += h * k;
            }
        }
        _ => {
            axpy(x, h, &[(k1, 0.5)], tmp);
            field.velocity(tmp, t + 0.5 * h, k2);
            axpy(x, h, &[(k2, 0.5)], tmp);
            field.velocity(tmp, t + 0.5 * h, k3);
            axpy(x, h, &[(k3, 1.0)], tmp);
            field.velocity(tmp, t + h, k4);
            for i in 0..x.len() {
                x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
        }
    }
}

/// Solves `dx/dt = v(x, t)` from `t_from` to `t_to` (either direction) and
/// calls `visit(t, x)` at every accepted step, starting with the initial state.
pub fn integrate_visit<V, F>(field: &V, x0: &[f64], t_from: f64, t_to: f64, cfg: &FlowConfig, mut visit: F) -> Result<Vec<f64>>
where
    V: VelocityField + ?Sized,
    F: FnMut(f64, &[f64]),
{
    if x0.len() != field.dim() {
        return Err(Error::Dimension {
            expected: field.dim(),
            got: x0.len(),
        });
    }
    let mut x = x0.to_vec();
    visit(t_from, &x);
    if t_from == t_to {
        return Ok(x);
    }
    let d = x.len();
    match cfg.method {
        Method::Euler | Method::Rk4 => {
            let grid = time_grid(cfg.spacing, t_from, t_to, cfg.steps)?;
            let mut scratch = [vec![0.0; d], vec![0.0; d], vec![0.0; d], vec![0.0; d], vec![0.0; d]];
            for (step, w) in grid.windows(2).enumerate() {
                fixed_step(field, cfg.method, &mut x, w[0], w[1] - w[0], &mut scratch);
                if x.iter().any(|v| !v.is_finite()) {
                    return Err(non_finite(w[1], step + 1, &x));
                }
                visit(w[1], &x);
            }
        }
        Method::AdaptiveRk45 => dopri(field, &mut x, t_from, t_to, cfg.tolerance, &mut visit)?,
    }
    Ok(x)
}

/// Dormand–Prince 5(4) with standard step-size control.
fn dopri<V, F>(field: &V, x: &mut [f64], t_from: f64, t_to: f64, tol: f64, visit: &mut F) -> Result<()>
where
    V: VelocityField + ?Sized,
    F: FnMut(f64, &[f64]),
{
    const C: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
    const A: [[f64; 6]; 7] = [
        [0.0; 6],
        [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
        [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
        [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
        [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
        [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
        [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
    ];
    const E: [f64; 7] = [
        71.0 / 57600.0,
        0.0,
        -71.0 / 16695.0,
        71.0 / 1920.0,
        -17253.0 / 339200.0,
        22.0 / 525.0,
        -1.0 / 40.0,
    ];
    const MAX_STEPS: usize = 1_000_000;
    let d = x.len();
    let dir = (t_to - t_from).signum();
    let span = (t_to - t_from).abs();
    let mut h = span / 100.0;
    let mut t = t_from;
    let mut k: Vec<Vec<f64>> = vec![vec![0.0; d]; 7];
    let mut tmp = vec![0.0; d];
    let mut steps = 0;
    let mut err = 0.0;
    while (t_to - t) * dir > 0.0 {
        if steps >= MAX_STEPS {
            return Err(Error::Tolerance { estimate: err, error: tol });
        }
        steps += 1;
        h = h.min((t_to - t).abs());
        let hs = h * dir;
        field.velocity(x, t, &mut k[0]);
        for stage in 1..7 {
            for i in 0..d {
                tmp[i] = x[i] + hs * (0..stage).map(|j| A[stage][j] * k[j][i]).sum::<f64>();
            }
            field.velocity(&tmp, t + C[stage] * hs, &mut k[stage]);
        }
        // tmp now holds the fifth-order solution (FSAL row)
        err = (0..d)
            .map(|i| {
                let e = hs * (0..7).map(|j| E[j] * k[j][i]).sum::<f64>();
                (e / (tol + tol * x[i].abs().max(tmp[i].abs()))).abs()
            })
            .fold(0.0, f64::max);
        if !err.is_finite() {
            return Err(non_finite(t, steps, x));
        }
        if err <= 1.0 {
            t = if (h - (t_to - t).abs()).abs() == 0.0 { t_to } else { t + hs };
            x.copy_from_slice(&tmp);
            visit(t, x);
        }
        let factor = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
        h *= factor;
        if h < span * 1e-15 {
            return Err(non_finite(t, steps, x));
        }
    }
    Ok(())
}

/// Solves from `t_from` to `t_to`.
pub fn integrate_between<V: VelocityField + ?Sized>(field: &V, x0: &[f64], t_from: f64, t_to: f64, cfg: &FlowConfig) -> Result<Vec<f64>> {
    integrate_visit(field, x0, t_from, t_to, cfg, |_, _| {})
}

/// Solves from `cfg.t_start` (normally 1) down to `cfg.t_end`.
pub fn integrate<V: VelocityField + ?Sized>(field: &V, x1: &[f64], cfg: &FlowConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    integrate_between(field, x1, cfg.t_start, cfg.t_end, cfg)
}

/// All accepted `(t, x)` states along one trajectory.
pub fn trajectory<V: VelocityField + ?Sized>(field: &V, x1: &[f64], cfg: &FlowConfig) -> Result<Vec<(f64, Vec<f64>)>> {
    cfg.validate()?;
    let mut out = Vec::new();
    integrate_visit(field, x1, cfg.t_start, cfg.t_end, cfg, |t, x| out.push((t, x.to_vec())))?;
    Ok(out)
}

fn tag_sample(e: Error, i: usize) -> Error {
    match e {
        Error::NonFinite { t, step, last, .. } => Error::NonFinite {
            t,
            step,
            sample: Some(i),
            last,
        },
        other => other,
    }
}

/// Pushes `n_gen` standard-normal draws through the flow. Draw `i` comes from
/// substream `i` of `seed`.
pub fn push_samples<V: VelocityField + ?Sized>(field: &V, seed: u64, n_gen: usize, cfg: &FlowConfig) -> Result<Points> {
    if n_gen == 0 {
        return Err(Error::Parameter("n_gen must be at least 1".into()));
    }
    cfg.validate()?;
    let d = field.dim();
    let rows: Vec<Vec<f64>> = (0..n_gen)
        .into_par_iter()
        .map(|i| {
            let mut rng = substream(seed, i as u64);
            let z: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
            integrate(field, &z, cfg).map_err(|e| tag_sample(e, i))
        })
        .collect::<Result<_>>()?;
    Points::new(d, rows.concat())
}

/// Pushes the normal quantiles `Φ⁻¹((i + ½)/n_gen)` through a scalar flow.
/// Since 1D flows preserve order, the output is the quantile function of the
/// pushforward at the same levels.
pub fn push_quantiles<V: VelocityField + ?Sized>(field: &V, n_gen: usize, cfg: &FlowConfig) -> Result<Vec<f64>> {
    if n_gen == 0 {
        return Err(Error::Parameter("n_gen must be at least 1".into()));
    }
    if field.dim() != 1 {
        return Err(Error::Dimension {
            expected: 1,
            got: field.dim(),
        });
    }
    cfg.validate()?;
    let normal = Normal::standard();
    (0..n_gen)
        .into_par_iter()
        .map(|i| {
            let z = normal.inverse_cdf((i as f64 + 0.5) / n_gen as f64);
            integrate(field, &[z], cfg).map(|x| x[0]).map_err(|e| tag_sample(e, i))
        })
        .collect()
}

/// Writes points as CSV, preceded by a `#` line carrying the metadata.
pub fn write_samples_csv<W: Write>(mut w: W, points: &Points, t_end: f64, field_id: &str, seed: u64) -> Result<()> {
    writeln!(w, "# t_end={t_end},field={field_id},seed={seed}")?;
    let header: Vec<String> = (0..points.dim()).map(|i| format!("x{i}")).collect();
    writeln!(w, "{}", header.join(","))?;
    for row in points.rows() {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
        writeln!(w, "{}", cells.join(","))?;
    }
    Ok(())
}

/// Which exponential weight the flow-error bound uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundExponent {
    /// `exp(2 ∫ₛᵗ L_u du)`, the Grönwall factor.
    Lipschitz,
    /// `exp(2 ∫ₛᵗ exp(L_u) du)`.
    ExpLipschitz,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundEstimate {
    pub value: f64,
    pub std_err: f64,
}

/// Monte-Carlo estimate of
/// `√t (∫₀ᵗ ∫ w(s, t) ‖v̂_s(x) − v_s(x)‖² dP_s(x) ds)^{1/2}` with
/// `w = exp(2 ∫ₛᵗ L_u du)` (or the `ExpLipschitz` variant). Time runs forward
/// from 0; `p_sampler(s, seed, k)` must return `k` draws from `P_s`. Uses
/// `mc` stratified times with one draw each.
#[allow(clippy::too_many_arguments)]
pub fn w2_bound_rhs<A, B, S, L>(
    v_hat: &A,
    v_true: &B,
    p_sampler: S,
    lip: L,
    t: f64,
    mc: usize,
    seed: u64,
    exponent: BoundExponent,
) -> Result<BoundEstimate>
where
    A: VelocityField + ?Sized,
    B: VelocityField + ?Sized,
    S: Fn(f64, u64, usize) -> Result<Points>,
    L: Fn(f64) -> f64,
{
    if mc == 0 {
        return Err(Error::Parameter("mc must be at least 1".into()));
    }
    if !(t > 0.0) {
        return Err(Error::Domain(format!("bound time must be positive, got {t}")));
    }
    let rule = GaussLegendre::new(32);
    let rate = |u: f64| match exponent {
        BoundExponent::Lipschitz => lip(u),
        BoundExponent::ExpLipschitz => lip(u).exp(),
    };
    let full = rule.integrate(rate, 0.0, t);
    if !(full <= MAX_EXPONENT) {
        return Err(Error::Overflow(format!(
            "exponent integral {full} exceeds {MAX_EXPONENT}; the bound is vacuous"
        )));
    }
    let mut rng = substream(seed, 0x7732);
    let times = crate::cfm::stratified_times(&mut rng, 0.0, t, mc);
    let d = v_hat.dim();
    let mut a = vec![0.0; d];
    let mut b = vec![0.0; d];
    let mut vals = Vec::with_capacity(mc);
    for (k, &s) in times.iter().enumerate() {
        let pts = p_sampler(s, crate::rng::derive_seed(seed, &[k as u64]), 1)?;
        let x = pts.row(0);
        v_hat.velocity(x, s, &mut a);
        v_true.velocity(x, s, &mut b);
        let resid: f64 = a.iter().zip(&b).map(|(p, q)| (p - q).powi(2)).sum();
        let weight = (2.0 * rule.integrate(rate, s, t)).exp();
        vals.push(weight * resid);
    }
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    let var = if vals.len() > 1 {
        vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    let inner = t * mean;
    let inner_se = t * (var / n).sqrt();
    let value = (t * inner).sqrt();
    let std_err = if inner > 0.0 { t.sqrt() * inner_se / (2.0 * inner.sqrt()) } else { 0.0 };
    Ok(BoundEstimate { value, std_err })
}

/// A field with a closed-form flow `φ_{s,t}` and its spatial Jacobian.
pub trait AnalyticFlow: VelocityField {
    fn flow(&self, x: &[f64], s: f64, t: f64) -> Vec<f64>;
    /// Row-major `d × d` Jacobian of `x ↦ φ_{s,t}(x)`.
    fn flow_jacobian(&self, x: &[f64], s: f64, t: f64) -> Vec<f64>;
}

impl AnalyticFlow for LinearField {
    fn flow(&self, x: &[f64], s: f64, t: f64) -> Vec<f64> {
        let g = (self.rate * (t - s)).exp();
        x.iter().map(|v| v * g).collect()
    }

    fn flow_jacobian(&self, _x: &[f64], s: f64, t: f64) -> Vec<f64> {
        let g = (self.rate * (t - s)).exp();
        let d = self.dim;
        (0..d * d).map(|k| if k / d == k % d { g } else { 0.0 }).collect()
    }
}

impl AnalyticFlow for ConstantField {
    fn flow(&self, x: &[f64], s: f64, t: f64) -> Vec<f64> {
        x.iter().zip(&self.value).map(|(v, c)| v + c * (t - s)).collect()
    }

    fn flow_jacobian(&self, _x: &[f64], _s: f64, _t: f64) -> Vec<f64> {
        let d = self.value.len();
        (0..d * d).map(|k| if k / d == k % d { 1.0 } else { 0.0 }).collect()
    }
}

/// `‖(φ̂_{0,T} − φ_{0,T})(x₀) − ∫₀ᵀ ∇φ̂_{s,T}(φ_{0,s}x₀)(v̂ − v)(φ_{0,s}x₀, s) ds‖∞`
/// with the integral by composite Simpson on `quad_steps` (rounded up to even)
/// panels.
pub fn alekseev_grobner_check<A, B>(v_hat: &A, v_true: &B, x0: &[f64], horizon: f64, quad_steps: usize) -> f64
where
    A: AnalyticFlow + ?Sized,
    B: AnalyticFlow + ?Sized,
{
    let d = x0.len();
    let lhs: Vec<f64> = v_hat
        .flow(x0, 0.0, horizon)
        .iter()
        .zip(v_true.flow(x0, 0.0, horizon))
        .map(|(a, b)| a - b)
        .collect();
    let n = quad_steps.max(2).div_ceil(2) * 2;
    let h = horizon / n as f64;
    let mut rhs = vec![0.0; d];
    let mut a = vec![0.0; d];
    let mut b = vec![0.0; d];
    for i in 0..=n {
        let s = i as f64 * h;
        let w = if i == 0 || i == n {
            1.0
        } else if i % 2 == 1 {
            4.0
        } else {
            2.0
        };
        let y = v_true.flow(x0, 0.0, s);
        v_hat.velocity(&y, s, &mut a);
        v_true.velocity(&y, s, &mut b);
        let jac = v_hat.flow_jacobian(&y, s, horizon);
        for r in 0..d {
            let row: f64 = (0..d).map(|c| jac[r * d + c] * (a[c] - b[c])).sum();
            rhs[r] += w * row;
        }
    }
    lhs.iter()
        .zip(&rhs)
        .map(|(l, r)| (l - r * h / 3.0).abs())
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::FnField;

    fn x_over_t() -> impl VelocityField {
        FnField::new(1, |x: &[f64], t: f64, out: &mut [f64]| out[0] = x[0] / t)
    }

    #[test]
    fn grids_hit_endpoints() {
        for spacing in [Spacing::Uniform, Spacing::Logarithmic, Spacing::GradedLogarithmic] {
            let g = time_grid(spacing, 1.0, 1e-3, 40).unwrap();
            assert_eq!(g.len(), 41);
            assert_eq!(g[0], 1.0);
            assert_eq!(g[40], 1e-3);
            assert!(g.windows(2).all(|w| w[1] < w[0]), "{spacing:?}");
        }
        let g = time_grid(Spacing::GradedLogarithmic, 1.0, 1e-3, 40).unwrap();
        assert!((1.0 - g[1] - GRADED_END_GAP).abs() < 1e-15);
        assert!(time_grid(Spacing::Logarithmic, 0.0, 1.0, 4).is_err());
    }

    #[test]
    fn x_over_t_closed_form() {
        let cfg = FlowConfig::rk4(200, Spacing::Logarithmic, 1e-3);
        let x = integrate(&x_over_t(), &[0.7], &cfg).unwrap();
        assert!((x[0] - 0.7e-3).abs() < 1e-8 * 0.7e-3);
    }

    #[test]
    fn constant_and_linear_fields() {
        let cfg = FlowConfig::rk4(50, Spacing::Uniform, 0.25);
        let c = ConstantField { value: vec![2.0] };
        let x = integrate(&c, &[1.0], &cfg).unwrap();
        assert!((x[0] - (1.0 + 2.0 * (0.25 - 1.0))).abs() < 1e-14);
        let lin = LinearField { dim: 1, rate: -1.0 };
        let cfg = FlowConfig::rk4(200, Spacing::Logarithmic, 1e-3);
        let x = integrate(&lin, &[0.5], &cfg).unwrap();
        let exact = 0.5 * (1.0f64 - 1e-3).exp();
        assert!((x[0] - exact).abs() < 1e-8 * exact);
    }

    #[test]
    fn adaptive_matches_closed_form() {
        let cfg = FlowConfig {
            method: Method::AdaptiveRk45,
            tolerance: 1e-9,
            ..FlowConfig::default()
        };
        let x = integrate(&x_over_t(), &[0.7], &cfg).unwrap();
        assert!((x[0] - 0.7e-3).abs() < 1e-7 * 0.7e-3, "{}", x[0]);
    }

    #[test]
    fn euler_converges_first_order() {
        let lin = LinearField { dim: 1, rate: -1.0 };
        let exact = (0.9f64).exp();
        let err = |k| {
            let cfg = FlowConfig {
                method: Method::Euler,
                steps: k,
                spacing: Spacing::Uniform,
                t_end: 0.1,
                ..FlowConfig::default()
            };
            (integrate(&lin, &[1.0], &cfg).unwrap()[0] - exact).abs()
        };
        let r = err(100) / err(200);
        assert!((r - 2.0).abs() < 0.1, "{r}");
    }

    #[test]
    fn non_finite_state_is_reported() {
        let bad = FnField::new(1, |_x: &[f64], t: f64, out: &mut [f64]| out[0] = if t < 0.5 { f64::NAN } else { 0.0 });
        let cfg = FlowConfig::rk4(10, Spacing::Uniform, 0.1);
        match integrate(&bad, &[1.0], &cfg) {
            Err(Error::NonFinite { last, .. }) => assert!(last[0].is_nan()),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn push_rejects_empty_and_is_deterministic() {
        let cfg = FlowConfig::rk4(20, Spacing::Logarithmic, 0.1);
        assert!(push_samples(&x_over_t(), 1, 0, &cfg).is_err());
        let a = push_samples(&x_over_t(), 9, 16, &cfg).unwrap();
        let b = push_samples(&x_over_t(), 9, 16, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn quantile_push_is_sorted() {
        let cfg = FlowConfig::rk4(20, Spacing::Logarithmic, 0.1);
        let q = push_quantiles(&x_over_t(), 101, &cfg).unwrap();
        assert!(q.windows(2).all(|w| w[0] < w[1]));
        assert!(q[50].abs() < 1e-15);
    }

    #[test]
    fn bound_with_constant_residual() {
        let zero = ConstantField { value: vec![0.0, 0.0] };
        let shifted = ConstantField { value: vec![0.3, 0.3] };
        let sampler = |_s: f64, seed: u64, k: usize| {
            let mut rng = substream(seed, 0);
            Points::new(2, (0..2 * k).map(|_| rng.sample(StandardNormal)).collect())
        };
        let est = w2_bound_rhs(&shifted, &zero, sampler, |_| 0.0, 0.8, 32, 1, BoundExponent::Lipschitz).unwrap();
        assert!((est.value - 0.8 * 0.3 * 2f64.sqrt()).abs() < 1e-12);
        let est = w2_bound_rhs(&zero, &zero, sampler, |_| 0.0, 0.8, 32, 1, BoundExponent::Lipschitz).unwrap();
        assert_eq!(est.value, 0.0);
        assert!(matches!(
            w2_bound_rhs(&zero, &zero, sampler, |_| 1000.0, 0.8, 4, 1, BoundExponent::Lipschitz),
            Err(Error::Overflow(_))
        ));
    }

    #[test]
    fn alekseev_grobner_identity() {
        let same = LinearField { dim: 1, rate: -1.0 };
        assert!(alekseev_grobner_check(&same, &same, &[1.0], 1.0, 100) <= 1e-12);
        let zero = ConstantField { value: vec![0.0] };
        let shift = ConstantField { value: vec![0.7] };
        assert!(alekseev_grobner_check(&shift, &zero, &[0.2], 1.5, 10) <= 1e-10);
        let fast = LinearField { dim: 1, rate: -2.0 };
        assert!(alekseev_grobner_check(&fast, &same, &[1.0], 1.0, 10_000) <= 1e-6);
    }
}
