//! The velocity-field abstraction shared by oracles, networks and the ODE solver.

use std::sync::Arc;

/// Anything mapping `(x, t) ↦ v_t(x)` in reverse time.
pub trait VelocityField: Sync {
    fn dim(&self) -> usize;

    /// Writes `v_t(x)` into `out` (length `dim`).
    fn velocity(&self, x: &[f64], t: f64, out: &mut [f64]);

    fn eval(&self, x: &[f64], t: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.velocity(x, t, &mut out);
        out
    }
}

impl<T: VelocityField + ?Sized> VelocityField for &T {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn velocity(&self, x: &[f64], t: f64, out: &mut [f64]) {
        (**self).velocity(x, t, out)
    }
}

impl<T: VelocityField + ?Sized + Send> VelocityField for Box<T> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn velocity(&self, x: &[f64], t: f64, out: &mut [f64]) {
        (**self).velocity(x, t, out)
    }
}

impl<T: VelocityField + ?Sized + Send> VelocityField for Arc<T> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn velocity(&self, x: &[f64], t: f64, out: &mut [f64]) {
        (**self).velocity(x, t, out)
    }
}

/// A field given by a closure.
pub struct FnField<F> {
    dim: usize,
    f: F,
}

impl<F> FnField<F>
where
    F: Fn(&[f64], f64, &mut [f64]) + Sync,
{
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<F> VelocityField for FnField<F>
where
    F: Fn(&[f64], f64, &mut [f64]) + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }
    fn velocity(&self, x: &[f64], t: f64, out: &mut [f64]) {
        (self.f)(x, t, out)
    }
}

/// `v_t(x) = a·x` for a scalar `a`; its flow is `x ↦ x e^{a(t − s)}`.
#[derive(Debug, Clone, Copy)]
pub struct LinearField {
    pub dim: usize,
    pub rate: f64,
}

impl VelocityField for LinearField {
    fn dim(&self) -> usize {
        self.dim
    }
    fn velocity(&self, x: &[f64], _t: f64, out: &mut [f64]) {
        for (o, xi) in out.iter_mut().zip(x) {
            *o = self.rate * xi;
        }
    }
}

/// `v_t(x) = c`.
#[derive(Debug, Clone)]
pub struct ConstantField {
    pub value: Vec<f64>,
}

impl VelocityField for ConstantField {
    fn dim(&self) -> usize {
        self.value.len()
    }
    fn velocity(&self, _x: &[f64], _t: f64, out: &mut [f64]) {
        out.copy_from_slice(&self.value);
    }
}
