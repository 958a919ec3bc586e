//! Gauss–Legendre rules, panel integration and a simple adaptive driver.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::f64::consts::PI;

use crate::error::{Error, Result};

/// An `n`-point Gauss–Legendre rule on `[-1, 1]`.
#[derive(Debug, Clone)]
pub struct GaussLegendre {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussLegendre {
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "Gauss-Legendre rule needs at least one node");
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        for i in 0..n.div_ceil(2) {
            // Tricomi initial guess, then Newton on P_n.
            let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 1.0;
            for _ in 0..100 {
                let (p, d) = legendre(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre(n, x);
            if d.is_finite() {
                dp = d;
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        if n % 2 == 1 {
            nodes[n / 2] = 0.0;
        }
        Self { nodes, weights }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Nodes and weights mapped to `[a, b]`.
    pub fn mapped(&self, a: f64, b: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(move |(&x, &w)| (mid + half * x, half * w))
    }

    pub fn integrate<F: FnMut(f64) -> f64>(&self, mut f: F, a: f64, b: f64) -> f64 {
        self.mapped(a, b).map(|(x, w)| w * f(x)).sum()
    }

    /// Sum of the rule applied on each consecutive pair of `breaks`.
    pub fn integrate_panels<F: FnMut(f64) -> f64>(&self, mut f: F, breaks: &[f64]) -> f64 {
        breaks
            .windows(2)
            .map(|w| self.integrate(&mut f, w[0], w[1]))
            .sum()
    }
}

fn legendre(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    let p = if n == 0 { 1.0 } else { p1 };
    let dp = n as f64 * (x * p - p0) / (x * x - 1.0);
    (p, dp)
}

/// Bisections allowed per call before giving up.
const MAX_SUBINTERVALS: usize = 100_000;

struct Panel {
    a: f64,
    b: f64,
    left: f64,
    right: f64,
    err: f64,
}

impl Panel {
    fn new<F: FnMut(f64) -> f64>(rule: &GaussLegendre, f: &mut F, a: f64, b: f64, whole: f64) -> Self {
        let mid = 0.5 * (a + b);
        let left = rule.integrate(&mut *f, a, mid);
        let right = rule.integrate(&mut *f, mid, b);
        Self {
            a,
            b,
            left,
            right,
            err: (left + right - whole).abs(),
        }
    }
}

impl PartialEq for Panel {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Panel {}

impl PartialOrd for Panel {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Panel {
    fn cmp(&self, other: &Self) -> Ordering {
        self.err.total_cmp(&other.err).then(other.a.total_cmp(&self.a))
    }
}

/// Globally adaptive bisection driven by a Gauss–Legendre rule; `tol` is
/// absolute.
///
/// The panel with the largest error indicator is split until the indicators
/// sum to at most `tol`. Returns the estimate and that sum. Features narrower
/// than a panel must be bracketed by `breaks`, since a panel whose nodes all
/// miss a peak looks converged.
pub fn adaptive<F: FnMut(f64) -> f64>(
    rule: &GaussLegendre,
    mut f: F,
    breaks: &[f64],
    tol: f64,
) -> Result<(f64, f64)> {
    let mut heap = BinaryHeap::new();
    for w in breaks.windows(2) {
        if w[0] != w[1] {
            let whole = rule.integrate(&mut f, w[0], w[1]);
            heap.push(Panel::new(rule, &mut f, w[0], w[1], whole));
        }
    }
    let total_err = |h: &BinaryHeap<Panel>| h.iter().map(|p| p.err).sum::<f64>();
    let mut err = total_err(&heap);
    let mut splits = 0;
    while err > tol && splits < MAX_SUBINTERVALS {
        let Some(p) = heap.pop() else { break };
        let mid = 0.5 * (p.a + p.b);
        if !(mid > p.a.min(p.b) && mid < p.a.max(p.b)) {
            // cannot split further in floating point
            heap.push(p);
            break;
        }
        let (l, r) = (
            Panel::new(rule, &mut f, p.a, mid, p.left),
            Panel::new(rule, &mut f, mid, p.b, p.right),
        );
        err += l.err + r.err - p.err;
        heap.push(l);
        heap.push(r);
        splits += 1;
        // resum now and then so the running total does not drift
        if splits % 1024 == 0 || err <= tol {
            err = total_err(&heap);
        }
    }
    let mut panels = heap.into_vec();
    panels.sort_by(|x, y| x.a.total_cmp(&y.a));
    let value: f64 = panels.iter().map(|p| p.left + p.right).sum();
    let err: f64 = panels.iter().map(|p| p.err).sum();
    if !(err <= tol) {
        return Err(Error::Tolerance { estimate: value, error: err });
    }
    Ok((value, err))
}
