//! Log-log slope fitting.

use flowrate::stats::loglog_fit;
use serde::{Deserialize, Serialize};

use crate::HarnessError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub stderr: f64,
    pub intercept: f64,
    pub points: usize,
}

/// Ordinary least squares of `ln value` on `ln n`. Needs at least three
/// points with positive values and not all `n` equal.
pub fn fit_slope(points: &[(f64, f64)]) -> Result<SlopeFit, HarnessError> {
    let f = loglog_fit(points)?;
    Ok(SlopeFit {
        slope: f.slope,
        stderr: f.slope_stderr,
        intercept: f.intercept,
        points: f.points,
    })
}
