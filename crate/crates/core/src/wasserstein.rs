//! Wasserstein distances between empirical measures.

use rand::seq::index::sample as sample_indices;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::points::Points;
use crate::rng::substream;

/// Largest problem accepted by the exact assignment solver.
pub const EXACT_CAP: usize = 4096;

/// A weighted point cloud. Weights default to uniform.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalMeasure {
    points: Points,
    weights: Option<Vec<f64>>,
}

impl EmpiricalMeasure {
    pub fn new(points: Points, weights: Option<Vec<f64>>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Parameter("a measure needs at least one point".into()));
        }
        if let Some(w) = &weights {
            if w.len() != points.len() {
                return Err(Error::Dimension {
                    expected: points.len(),
                    got: w.len(),
                });
            }
            let total: f64 = w.iter().sum();
            if w.iter().any(|v| !(*v >= 0.0)) || (total - 1.0).abs() > 1e-12 {
                return Err(Error::Parameter(format!("weights must be a probability vector (sum {total})")));
            }
        }
        Ok(Self { points, weights })
    }

    pub fn uniform(points: Points) -> Result<Self> {
        Self::new(points, None)
    }

    pub fn from_scalars(xs: Vec<f64>) -> Result<Self> {
        Self::uniform(Points::from_scalars(xs))
    }

    pub fn points(&self) -> &Points {
        &self.points
    }

    pub fn dim(&self) -> usize {
        self.points.dim()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn is_uniform(&self) -> bool {
        self.weights.is_none()
    }

    pub fn weight(&self, i: usize) -> f64 {
        match &self.weights {
            Some(w) => w[i],
            None => 1.0 / self.points.len() as f64,
        }
    }

    pub fn weights(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.weight(i)).collect()
    }
}

fn check_p(p: f64) -> Result<()> {
    if !(p >= 1.0 && p.is_finite()) {
        return Err(Error::Parameter(format!("p must be a finite value >= 1, got {p}")));
    }
    Ok(())
}

/// Exact `W_p` on the line via the quantile coupling.
pub fn w_p_1d(a: &EmpiricalMeasure, b: &EmpiricalMeasure, p: f64) -> Result<f64> {
    check_p(p)?;
    for m in [a, b] {
        if m.dim() != 1 {
            return Err(Error::Dimension {
                expected: 1,
                got: m.dim(),
            });
        }
    }
    let sorted = |m: &EmpiricalMeasure| {
        let mut v: Vec<(f64, f64)> = m.points.coords().iter().copied().zip(m.weights()).collect();
        v.sort_by(|x, y| x.0.total_cmp(&y.0));
        v
    };
    let (sa, sb) = (sorted(a), sorted(b));
    let (mut i, mut j) = (0, 0);
    let (mut ca, mut cb) = (sa[0].1, sb[0].1);
    let mut prev = 0.0;
    let mut total = 0.0;
    loop {
        let level = ca.min(cb);
        total += (level - prev).max(0.0) * (sa[i].0 - sb[j].0).abs().powf(p);
        prev = level;
        let (a_last, b_last) = (i + 1 == sa.len(), j + 1 == sb.len());
        if a_last && b_last {
            break;
        }
        if (ca <= cb && !a_last) || b_last {
            i += 1;
            ca += sa[i].1;
        } else {
            j += 1;
            cb += sb[j].1;
        }
    }
    Ok(total.powf(1.0 / p))
}

/// Sorted-sample shortcut for equal-size uniform 1D samples.
pub fn w_p_sorted(a: &[f64], b: &[f64], p: f64) -> Result<f64> {
    check_p(p)?;
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::Size(format!("sorted coupling needs equal nonempty sizes, got {} and {}", a.len(), b.len())));
    }
    let mut sa = a.to_vec();
    let mut sb = b.to_vec();
    sa.sort_by(f64::total_cmp);
    sb.sort_by(f64::total_cmp);
    let s: f64 = sa.iter().zip(&sb).map(|(x, y)| (x - y).abs().powf(p)).sum();
    Ok((s / a.len() as f64).powf(1.0 / p))
}

fn cost_matrix(a: &Points, b: &Points, p: f64) -> Vec<f64> {
    let n = a.len();
    let m = b.len();
    let mut c = vec![0.0; n * m];
    for i in 0..n {
        let x = a.row(i);
        for j in 0..m {
            let sq: f64 = x.iter().zip(b.row(j)).map(|(u, v)| (u - v) * (u - v)).sum();
            c[i * m + j] = if p == 2.0 { sq } else { sq.sqrt().powf(p) };
        }
    }
    c
}

/// An optimal matching between two equal-size uniform clouds.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Assignment {
    /// `column[i]` is the point of `b` matched to point `i` of `a`.
    pub column: Vec<usize>,
    /// `‖a_i − b_{column[i]}‖^p`.
    pub costs: Vec<f64>,
    /// `((1/n) Σ costs)^{1/p}`.
    pub value: f64,
}

/// Exact `W_p` by minimum-cost perfect matching.
pub fn w_p_exact(a: &EmpiricalMeasure, b: &EmpiricalMeasure, p: f64) -> Result<f64> {
    // solve in a canonical argument order so that swapping the inputs cannot
    // pick a different optimal matching among ties
    let key = |m: &EmpiricalMeasure| (m.points().coords().to_vec(), m.weights());
    let swap = {
        let (ka, kb) = (key(a), key(b));
        let coords = ka.0.iter().zip(&kb.0).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne());
        let weights = || ka.1.iter().zip(&kb.1).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne());
        coords.or_else(weights).or(Some(ka.0.len().cmp(&kb.0.len()))) == Some(std::cmp::Ordering::Greater)
    };
    let sol = if swap { assignment(b, a, p)? } else { assignment(a, b, p)? };
    Ok(sol.value)
}

/// Solves the matching behind [`w_p_exact`].
pub fn assignment(a: &EmpiricalMeasure, b: &EmpiricalMeasure, p: f64) -> Result<Assignment> {
    check_p(p)?;
    if a.dim() != b.dim() {
        return Err(Error::Dimension {
            expected: a.dim(),
            got: b.dim(),
        });
    }
    if a.len() != b.len() {
        return Err(Error::Size(format!(
            "exact solver needs equal sizes, got {} and {}; resample first",
            a.len(),
            b.len()
        )));
    }
    if a.len() > EXACT_CAP {
        return Err(Error::Size(format!("{} points exceeds the exact-solver cap {EXACT_CAP}", a.len())));
    }
    if !a.is_uniform() || !b.is_uniform() {
        return Err(Error::Parameter("exact solver needs uniform weights".into()));
    }
    let n = a.len();
    let c = cost_matrix(&a.points, &b.points, p);
    let column = lapjv(n, &c);
    let costs: Vec<f64> = column.iter().enumerate().map(|(i, &j)| c[i * n + j]).collect();
    let value = (ordered_sum(&costs) / n as f64).powf(1.0 / p);
    Ok(Assignment { column, costs, value })
}

/// Dense minimum-cost perfect matching: auction prices as a warm start, then
/// Jonker–Volgenant shortest augmenting paths for the rows left free, which
/// makes the result exact. Returns the column assigned to each row.
pub(crate) fn lapjv(n: usize, c: &[f64]) -> Vec<usize> {
    const NONE: usize = usize::MAX;
    if n == 0 {
        return Vec::new();
    }
    if n == 1 {
        return vec![0];
    }
    let (mut rowsol, mut colsol, mut v, free) = auction_start(n, c);
    // Dijkstra on reduced costs, one column settled per pass; each pass
    // relaxes the remaining columns and finds the next minimum together.
    // Settled columns get an infinite price in `w` so they never relax.
    let mut d = vec![0.0; n];
    let mut pred = vec![0usize; n];
    let mut w = v.clone();
    let mut ready: Vec<(usize, f64)> = Vec::with_capacity(n);
    for &freerow in &free {
        let row = &c[freerow * n..(freerow + 1) * n];
        let (mut jmin, mut min) = (0, f64::INFINITY);
        for j in 0..n {
            d[j] = row[j] - v[j];
            pred[j] = freerow;
            if d[j] < min {
                min = d[j];
                jmin = j;
            }
        }
        ready.clear();
        let endofpath = loop {
            if colsol[jmin] == NONE {
                break jmin;
            }
            ready.push((jmin, min));
            w[jmin] = f64::NEG_INFINITY;
            d[jmin] = f64::INFINITY;
            let i = colsol[jmin];
            let row = &c[i * n..(i + 1) * n];
            let h = row[jmin] - v[jmin] - min;
            let (mut next, mut next_min) = (0, f64::INFINITY);
            for j in 0..n {
                let v2 = row[j] - w[j] - h;
                if v2 < d[j] {
                    d[j] = v2;
                    pred[j] = i;
                }
                if d[j] < next_min {
                    next_min = d[j];
                    next = j;
                }
            }
            jmin = next;
            min = next_min;
        };
        for &(j, dj) in &ready {
            v[j] += dj - min;
            w[j] = v[j];
        }
        let mut end = endofpath;
        loop {
            let i = pred[end];
            colsol[end] = i;
            std::mem::swap(&mut end, &mut rowsol[i]);
            if i == freerow {
                break;
            }
        }
    }
    rowsol
}

/// Starting prices and a partial matching from an epsilon-scaling auction.
/// Returns `(rowsol, colsol, v, free)` where every matched row sits on a
/// minimum of `c[i][j] - v[j]`; rows that fail this are left free.
fn auction_start(n: usize, c: &[f64]) -> (Vec<usize>, Vec<usize>, Vec<f64>, Vec<usize>) {
    const NONE: usize = usize::MAX;
    let cmax = c.iter().fold(0.0f64, |m, &x| m.max(x.abs()));
    if cmax == 0.0 {
        let id: Vec<usize> = (0..n).collect();
        return (id.clone(), id, vec![0.0; n], Vec::new());
    }
    let mut p = vec![0.0; n];
    let mut rowsol = vec![NONE; n];
    let mut colsol = vec![NONE; n];
    let eps_final = cmax / (n as f64 * n as f64);
    let mut eps = cmax / 4.0;
    loop {
        rowsol.fill(NONE);
        colsol.fill(NONE);
        let mut queue: Vec<usize> = (0..n).rev().collect();
        while let Some(i) = queue.pop() {
            let row = &c[i * n..(i + 1) * n];
            let (mut j1, mut r1, mut r2) = (0, f64::INFINITY, f64::INFINITY);
            for j in 0..n {
                let r = row[j] + p[j];
                if r < r2 {
                    if r < r1 {
                        r2 = r1;
                        r1 = r;
                        j1 = j;
                    } else {
                        r2 = r;
                    }
                }
            }
            p[j1] += r2 - r1 + eps;
            let old = colsol[j1];
            if old != NONE {
                rowsol[old] = NONE;
                queue.push(old);
            }
            rowsol[i] = j1;
            colsol[j1] = i;
        }
        if eps <= eps_final {
            break;
        }
        eps = (eps / 7.0).max(eps_final);
    }
    // raise each matched price until its row is tight, then drop the rows
    // that the raises pushed off their minimum
    let mut v: Vec<f64> = p.iter().map(|x| -x).collect();
    for i in 0..n {
        let row = &c[i * n..(i + 1) * n];
        let u = row.iter().zip(&v).map(|(a, b)| a - b).fold(f64::INFINITY, f64::min);
        let j = rowsol[i];
        v[j] += row[j] - v[j] - u;
    }
    let mut free = Vec::new();
    for i in 0..n {
        let row = &c[i * n..(i + 1) * n];
        let j = rowsol[i];
        let own = row[j] - v[j];
        if row.iter().zip(&v).any(|(a, b)| a - b < own) {
            colsol[j] = NONE;
            rowsol[i] = NONE;
            free.push(i);
        }
    }
    (rowsol, colsol, v, free)
}

/// Brute-force optimal permutation cost for tiny problems (`n ≤ 9`).
pub fn brute_force_w_p(a: &Points, b: &Points, p: f64) -> Result<f64> {
    check_p(p)?;
    let n = a.len();
    if n != b.len() || n == 0 || n > 9 {
        return Err(Error::Size(format!("brute force needs equal sizes in 1..=9, got {n} and {}", b.len())));
    }
    let c = cost_matrix(a, b, p);
    let mut perm: Vec<usize> = (0..n).collect();
    let mut best = f64::INFINITY;
    let mut costs = vec![0.0; n];
    permute(&mut perm, 0, &mut |pm| {
        for (i, &j) in pm.iter().enumerate() {
            costs[i] = c[i * n + j];
        }
        best = best.min(ordered_sum(&costs));
    });
    Ok((best / n as f64).powf(1.0 / p))
}

/// Sum in ascending order, so the total depends only on the multiset of terms.
fn ordered_sum(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    s.iter().sum()
}

fn permute<F: FnMut(&[usize])>(v: &mut Vec<usize>, k: usize, f: &mut F) {
    if k == v.len() {
        f(v);
        return;
    }
    for i in k..v.len() {
        v.swap(k, i);
        permute(v, k + 1, f);
        v.swap(k, i);
    }
}

/// Outcome of the entropic solver.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SinkhornResult {
    /// `max(S_ε, 0)^{1/p}` for the debiased divergence `S_ε`.
    pub value: f64,
    pub converged: bool,
    pub iterations: usize,
    /// `ℓ₁` violation of the column marginal of the cross term.
    pub marginal_error: f64,
}

struct EntropicOt {
    dual: f64,
    converged: bool,
    iterations: usize,
    marginal_error: f64,
}

fn log_sum_exp(it: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = it.collect();
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Log-domain Sinkhorn with ε-scaling. Returns the dual objective `⟨a,f⟩ + ⟨b,g⟩`.
fn entropic(c: &[f64], wa: &[f64], wb: &[f64], eps: f64, max_iter: usize, tol: f64) -> EntropicOt {
    let (n, m) = (wa.len(), wb.len());
    let la: Vec<f64> = wa.iter().map(|w| w.ln()).collect();
    let lb: Vec<f64> = wb.iter().map(|w| w.ln()).collect();
    let mut f = vec![0.0; n];
    let mut g = vec![0.0; m];
    let cmax = c.iter().copied().fold(0.0, f64::max);
    let mut e = cmax.max(eps);
    let update = |f: &mut [f64], g: &mut [f64], e: f64| {
        for i in 0..n {
            f[i] = -e * log_sum_exp((0..m).map(|j| lb[j] + (g[j] - c[i * m + j]) / e));
        }
        for j in 0..m {
            g[j] = -e * log_sum_exp((0..n).map(|i| la[i] + (f[i] - c[i * m + j]) / e));
        }
    };
    while e > eps {
        for _ in 0..10 {
            update(&mut f, &mut g, e);
        }
        e = (e * 0.5).max(eps);
    }
    let mut iterations = 0;
    let mut err = f64::INFINITY;
    while iterations < max_iter {
        update(&mut f, &mut g, eps);
        iterations += 1;
        // after the g-update the column marginal is exact; check the rows
        err = (0..n)
            .map(|i| {
                let row = log_sum_exp((0..m).map(|j| lb[j] + (f[i] + g[j] - c[i * m + j]) / eps)).exp();
                (wa[i] * row - wa[i]).abs()
            })
            .sum();
        if err <= tol {
            break;
        }
    }
    let dual = wa.iter().zip(&f).map(|(w, v)| w * v).sum::<f64>() + wb.iter().zip(&g).map(|(w, v)| w * v).sum::<f64>();
    EntropicOt {
        dual,
        converged: err <= tol,
        iterations,
        marginal_error: err,
    }
}

/// Symmetric problem `OT_ε(a, a)`: one potential, updated by averaging with
/// its Sinkhorn image, which converges much faster than the plain iteration.
fn entropic_symmetric(c: &[f64], w: &[f64], eps: f64, max_iter: usize, tol: f64) -> EntropicOt {
    let n = w.len();
    let lw: Vec<f64> = w.iter().map(|v| v.ln()).collect();
    let mut f = vec![0.0; n];
    let image = |f: &[f64], e: f64| -> Vec<f64> {
        (0..n)
            .map(|i| -e * log_sum_exp((0..n).map(|j| lw[j] + (f[j] - c[i * n + j]) / e)))
            .collect()
    };
    let cmax = c.iter().copied().fold(0.0, f64::max);
    let mut e = cmax.max(eps);
    while e > eps {
        for _ in 0..10 {
            let g = image(&f, e);
            for (fi, gi) in f.iter_mut().zip(&g) {
                *fi = 0.5 * (*fi + gi);
            }
        }
        e = (e * 0.5).max(eps);
    }
    let mut iterations = 0;
    let mut err = f64::INFINITY;
    while iterations < max_iter {
        let g = image(&f, eps);
        iterations += 1;
        // g − f measures how far the plan's marginals are from w
        err = (0..n).map(|i| w[i] * (((f[i] - g[i]) / eps).exp() - 1.0).abs()).sum();
        for (fi, gi) in f.iter_mut().zip(&g) {
            *fi = 0.5 * (*fi + gi);
        }
        if err <= tol {
            break;
        }
    }
    EntropicOt {
        dual: 2.0 * w.iter().zip(&f).map(|(a, b)| a * b).sum::<f64>(),
        converged: err <= tol,
        iterations,
        marginal_error: err,
    }
}

/// Debiased entropic estimate `S_ε(a,b) = OT_ε(a,b) − ½OT_ε(a,a) − ½OT_ε(b,b)`.
pub fn sinkhorn_w_p(a: &EmpiricalMeasure, b: &EmpiricalMeasure, p: f64, eps: f64, max_iter: usize) -> Result<SinkhornResult> {
    check_p(p)?;
    if !(eps > 0.0) {
        return Err(Error::Parameter(format!("eps must be positive, got {eps}")));
    }
    if a.dim() != b.dim() {
        return Err(Error::Dimension {
            expected: a.dim(),
            got: b.dim(),
        });
    }
    const TOL: f64 = 1e-6;
    let (wa, wb) = (a.weights(), b.weights());
    let cross = entropic(&cost_matrix(&a.points, &b.points, p), &wa, &wb, eps, max_iter, TOL);
    let self_a = entropic_symmetric(&cost_matrix(&a.points, &a.points, p), &wa, eps, max_iter, TOL);
    let self_b = entropic_symmetric(&cost_matrix(&b.points, &b.points, p), &wb, eps, max_iter, TOL);
    let s = cross.dual - 0.5 * (self_a.dual + self_b.dual);
    Ok(SinkhornResult {
        value: s.max(0.0).powf(1.0 / p),
        converged: cross.converged && self_a.converged && self_b.converged,
        iterations: cross.iterations,
        marginal_error: cross.marginal_error,
    })
}

/// Uniform subsample of `k` rows without replacement, reproducible from `seed`.
pub fn resample(points: &Points, k: usize, seed: u64) -> Points {
    if k >= points.len() {
        return points.clone();
    }
    let mut rng = substream(seed, 0x7273);
    let mut idx = sample_indices(&mut rng, points.len(), k).into_vec();
    idx.sort_unstable();
    points.select(&idx)
}

/// `W_p` between uniform samples of any sizes: the quantile coupling in 1D,
/// otherwise the exact solver after subsampling the larger cloud to the
/// smaller size.
pub fn w_p(a: &Points, b: &Points, p: f64, seed: u64) -> Result<f64> {
    if a.dim() == 1 && b.dim() == 1 {
        return w_p_1d(
            &EmpiricalMeasure::uniform(a.clone())?,
            &EmpiricalMeasure::uniform(b.clone())?,
            p,
        );
    }
    let k = a.len().min(b.len());
    let (ra, rb) = (resample(a, k, seed), resample(b, k, seed ^ 1));
    w_p_exact(&EmpiricalMeasure::uniform(ra)?, &EmpiricalMeasure::uniform(rb)?, p)
}

/// `√((1 − m)² V + d σ²)`: a bound on `W₂(P, law of mY + σZ)` for `Y ~ P`
/// with `E‖Y‖² = V` and `Z` standard normal.
pub fn conv_gap_bound(m: f64, sigma: f64, second_moment: f64, d: usize) -> f64 {
    ((1.0 - m).powi(2) * second_moment + d as f64 * sigma * sigma).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng as _;

    fn m1(xs: &[f64]) -> EmpiricalMeasure {
        EmpiricalMeasure::from_scalars(xs.to_vec()).unwrap()
    }

    #[test]
    fn one_d_examples() {
        for p in [1.0, 2.0, 3.5] {
            assert!((w_p_1d(&m1(&[0.0]), &m1(&[1.0]), p).unwrap() - 1.0).abs() < 1e-15);
            assert_eq!(w_p_1d(&m1(&[0.0, 1.0]), &m1(&[1.0, 0.0]), p).unwrap(), 0.0);
        }
        assert!((w_p_1d(&m1(&[0.0, 0.0]), &m1(&[-1.0, 1.0]), 2.0).unwrap() - 1.0).abs() < 1e-15);
        assert!((w_p_1d(&m1(&[0.0, 0.0]), &m1(&[-1.0, 1.0]), 1.0).unwrap() - 1.0).abs() < 1e-15);
        let two_d = EmpiricalMeasure::uniform(Points::new(2, vec![0.0, 0.0]).unwrap()).unwrap();
        assert!(w_p_1d(&two_d, &two_d, 1.0).is_err());
    }

    #[test]
    fn one_d_unequal_sizes() {
        // {0} vs {−1, 1}: each half of the mass moves distance 1
        assert!((w_p_1d(&m1(&[0.0]), &m1(&[-1.0, 1.0]), 2.0).unwrap() - 1.0).abs() < 1e-15);
        // {0, 1, 2} vs {0, 2}: 1/3 at 0, 1/3 at 2, the middle third splits 1/6 each way
        let w = w_p_1d(&m1(&[0.0, 1.0, 2.0]), &m1(&[0.0, 2.0]), 1.0).unwrap();
        assert!((w - 1.0 / 3.0).abs() < 1e-12, "{w}");
    }

    #[test]
    fn exact_examples() {
        let a = EmpiricalMeasure::uniform(Points::new(2, vec![0.0, 0.0, 1.0, 0.0]).unwrap()).unwrap();
        let b = EmpiricalMeasure::uniform(Points::new(2, vec![0.0, 1.0, 1.0, 1.0]).unwrap()).unwrap();
        for p in [1.0, 2.0, 3.0] {
            assert!((w_p_exact(&a, &b, p).unwrap() - 1.0).abs() < 1e-15);
            assert_eq!(w_p_exact(&a, &a, p).unwrap(), 0.0);
        }
        let c = EmpiricalMeasure::uniform(Points::new(2, vec![0.0; 6]).unwrap()).unwrap();
        assert!(matches!(w_p_exact(&a, &c, 2.0), Err(Error::Size(_))));
    }

    /// O(n³) Hungarian with potentials, as an independent route.
    fn hungarian(n: usize, c: &[f64]) -> f64 {
        let inf = f64::INFINITY;
        let mut u = vec![0.0; n + 1];
        let mut v = vec![0.0; n + 1];
        let mut p = vec![0usize; n + 1];
        let mut way = vec![0usize; n + 1];
        for i in 1..=n {
            p[0] = i;
            let mut j0 = 0;
            let mut minv = vec![inf; n + 1];
            let mut used = vec![false; n + 1];
            loop {
                used[j0] = true;
                let i0 = p[j0];
                let mut delta = inf;
                let mut j1 = 0;
                for j in 1..=n {
                    if !used[j] {
                        let cur = c[(i0 - 1) * n + j - 1] - u[i0] - v[j];
                        if cur < minv[j] {
                            minv[j] = cur;
                            way[j] = j0;
                        }
                        if minv[j] < delta {
                            delta = minv[j];
                            j1 = j;
                        }
                    }
                }
                for j in 0..=n {
                    if used[j] {
                        u[p[j]] += delta;
                        v[j] -= delta;
                    } else {
                        minv[j] -= delta;
                    }
                }
                j0 = j1;
                if p[j0] == 0 {
                    break;
                }
            }
            loop {
                let j1 = way[j0];
                p[j0] = p[j1];
                j0 = j1;
                if j0 == 0 {
                    break;
                }
            }
        }
        (1..=n).map(|j| c[(p[j] - 1) * n + j - 1]).sum()
    }

    #[test]
    fn lapjv_matches_hungarian() {
        let mut rng = substream(5, 0);
        for trial in 0..30 {
            let n = 2 + trial * 3;
            let c: Vec<f64> = (0..n * n).map(|_| rng.random::<f64>()).collect();
            let col = lapjv(n, &c);
            let mut seen = vec![false; n];
            for &j in &col {
                assert!(!seen[j]);
                seen[j] = true;
            }
            let total: f64 = col.iter().enumerate().map(|(i, &j)| c[i * n + j]).sum();
            assert!((total - hungarian(n, &c)).abs() < 1e-10, "n = {n}");
        }
    }

    #[test]
    fn lapjv_handles_ties() {
        let n = 12;
        let mut rng = substream(6, 0);
        let c: Vec<f64> = (0..n * n).map(|_| rng.random_range(0..3) as f64).collect();
        let col = lapjv(n, &c);
        let total: f64 = col.iter().enumerate().map(|(i, &j)| c[i * n + j]).sum();
        assert_eq!(total, hungarian(n, &c));
    }

    #[test]
    fn lapjv_degenerate_costs() {
        for fill in [0.0, 2.5] {
            let col = lapjv(9, &[fill; 81]);
            let mut sorted = col.clone();
            sorted.sort_unstable();
            assert_eq!(sorted, (0..9).collect::<Vec<_>>());
        }
        let mut rng = substream(7, 0);
        let n = 40;
        let c: Vec<f64> = (0..n * n).map(|_| rng.random_range(-5.0..-4.0)).collect();
        let total: f64 = lapjv(n, &c).iter().enumerate().map(|(i, &j)| c[i * n + j]).sum();
        assert!((total - hungarian(n, &c)).abs() < 1e-10);
    }

    #[test]
    fn sinkhorn_point_masses() {
        let r = sinkhorn_w_p(&m1(&[0.0]), &m1(&[1.0]), 2.0, 1e-3, 100).unwrap();
        assert!((r.value - 1.0).abs() < 1e-2);
        let a = m1(&[0.0, 0.3, 0.9]);
        let r = sinkhorn_w_p(&a, &a, 2.0, 1e-3, 1000).unwrap();
        assert!(r.value < 1e-6, "{}", r.value);
    }

    #[test]
    fn conv_gap_examples() {
        assert_eq!(conv_gap_bound(1.0, 0.0, 5.0, 3), 0.0);
        assert!((conv_gap_bound(1.0, 0.1, 1.0, 4) - 0.2).abs() < 1e-15);
        let v = conv_gap_bound(0.9, 0.05, 1.0 / 3.0, 1);
        assert!((v - (0.01f64 / 3.0 + 0.0025).sqrt()).abs() < 1e-15);
        assert!((v - 0.07638).abs() < 1e-5);
    }

    #[test]
    fn resample_is_deterministic_subset() {
        let pts = Points::from_scalars((0..50).map(f64::from).collect());
        let r = resample(&pts, 10, 3);
        assert_eq!(r, resample(&pts, 10, 3));
        assert_eq!(r.len(), 10);
    }
}
