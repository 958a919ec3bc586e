//! Experiment configuration.
//!
//! The file is TOML: section headers, `key = value` lines and `[[schedule]]`
//! for each schedule in the sweep.
//!
//! ```toml
//! [target]
//! kind = "spline_mixture"      # uniform | spline_mixture | perturbed_uniform
//! dim = 1
//! smoothness = 1.0
//! symmetric = true
//!
//! [[schedule]]
//! family = "variance_preserving"
//!
//! [[schedule]]
//! family = "affine"
//!
//! [grid]
//! n = [128, 256, 512, 1024, 2048, 4096]
//! seeds = [0, 1, 2, 3, 4]
//!
//! [training]
//! mode = "trained"             # trained | oracle | kde
//! partition = "dyadic"         # dyadic | single
//! t0_mode = "fixed"            # fixed | theory
//! t0 = 1e-3
//! delta = 0.05
//!
//! [model]                      # network architecture
//! [optimizer]                  # steps, batch, lr, ...
//! [flow]                       # method, steps, spacing
//!
//! [eval]
//! p = [1.0, 2.0]
//! estimator = "quantile"       # quantile | exact | sinkhorn | sorted
//! n_eval = 1024
//! reference_size = 8192
//!
//! [output]
//! dir = "out"
//! parallel = 1
//! ```

use std::path::{Path, PathBuf};

use flowrate::ode::FlowConfig;
use flowrate::schedules::Schedule;
use flowrate::targets::TargetSpec;
use flowrate::velocity_model::{ModelConfig, TrainConfig};
use flowrate::wasserstein::EXACT_CAP;
use serde::{Deserialize, Serialize};

use crate::HarnessError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Networks trained by flow matching.
    Trained,
    /// The exact field of the empirical data.
    Oracle,
    /// Data plus Gaussian noise of width `σ_{T₀}`.
    Kde,
}

impl Mode {
    pub fn label(&self) -> &'static str {
        match self {
            Mode::Trained => "trained",
            Mode::Oracle => "oracle",
            Mode::Kde => "kde",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartitionMode {
    Single,
    Dyadic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum T0Mode {
    Fixed,
    /// `T₀ = N^{−R₀}` with `R₀ = (s + 1)/min(κ, κ̃)`, floored at `t0_min`.
    Theory,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    /// 1D only: flow the normal quantiles and compare with the exact target
    /// quantiles at the same levels.
    Quantile,
    /// Pushed random draws against a fresh reference sample, exact transport.
    Exact,
    /// Same draws, debiased entropic transport.
    Sinkhorn,
    /// 1D only: quantile coupling of the pushed draws and the reference sample.
    Sorted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub n: Vec<usize>,
    pub seeds: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub mode: Mode,
    pub partition: PartitionMode,
    pub t0_mode: T0Mode,
    pub t0: f64,
    pub t0_min: f64,
    pub delta: f64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Trained,
            partition: PartitionMode::Dyadic,
            t0_mode: T0Mode::Fixed,
            t0: 1e-3,
            t0_min: 1e-4,
            delta: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub p: Vec<f64>,
    pub estimator: Estimator,
    pub n_eval: usize,
    pub reference_size: usize,
    /// Entropic regularization, as a fraction of the median cost.
    pub sinkhorn_eps: f64,
    pub sinkhorn_iters: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            p: vec![1.0, 2.0],
            estimator: Estimator::Quantile,
            n_eval: 1024,
            reference_size: 8192,
            sinkhorn_eps: 0.01,
            sinkhorn_iters: 2000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
    pub parallel: usize,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
            parallel: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub target: TargetSpec,
    #[serde(rename = "schedule")]
    pub schedules: Vec<Schedule>,
    pub grid: GridConfig,
    #[serde(default)]
    pub training: TrainingConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub optimizer: TrainConfig,
    #[serde(default)]
    pub flow: FlowConfig,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        let cfg: Self = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Declared smoothness of the target.
    pub fn smoothness(&self) -> Result<f64, HarnessError> {
        Ok(self.target.build()?.smoothness())
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        let n = &self.grid.n;
        if n.len() < 3 {
            return bad(format!("the n grid needs at least 3 points for slope fitting, got {}", n.len()));
        }
        if n.windows(2).any(|w| w[0] >= w[1]) {
            return bad("the n grid must be strictly increasing".into());
        }
        if n[0] < 2 {
            return bad("every n must be at least 2".into());
        }
        if self.grid.seeds.is_empty() {
            return bad("at least one seed is required".into());
        }
        if self.schedules.is_empty() {
            return bad("at least one [[schedule]] is required".into());
        }
        if self.eval.p.is_empty() || self.eval.p.iter().any(|p| !(*p >= 1.0)) {
            return bad("eval.p must list values >= 1".into());
        }
        if self.eval.n_eval == 0 || self.eval.reference_size == 0 {
            return bad("n_eval and reference_size must be positive".into());
        }
        if self.eval.estimator == Estimator::Exact && self.eval.n_eval.min(self.eval.reference_size) > EXACT_CAP && self.target.dim > 1 {
            return bad(format!("n_eval exceeds the exact-solver cap {EXACT_CAP}"));
        }
        if matches!(self.eval.estimator, Estimator::Quantile | Estimator::Sorted) && self.target.dim != 1 {
            return bad("quantile and sorted estimators need a 1-dimensional target".into());
        }
        let t = &self.training;
        if !(t.t0 > 0.0 && t.t0 < 1.0) || !(t.t0_min > 0.0 && t.t0_min < 1.0) {
            return bad("t0 and t0_min must lie in (0, 1)".into());
        }
        for s in &self.schedules {
            if !(t.delta > 0.0 && t.delta < 1.0 / s.kappa()) {
                return bad(format!("delta must lie in (0, 1/kappa) for schedule {}", s.id()));
            }
        }
        if self.output.parallel == 0 {
            return bad("parallel must be at least 1".into());
        }
        self.flow.validate()?;
        self.target.build()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[target]
kind = "uniform"
dim = 1

[[schedule]]
family = "affine"

[grid]
n = [16, 32, 64]
seeds = [0]
"#;

    #[test]
    fn parses_minimal() {
        let cfg = ExperimentConfig::from_toml(MINIMAL).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.training.mode, Mode::Trained);
        assert_eq!(cfg.schedules.len(), 1);
        let back = ExperimentConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn empty_grid_rejected() {
        let cfg = ExperimentConfig::from_toml(&MINIMAL.replace("[16, 32, 64]", "[]")).unwrap();
        assert!(cfg.validate().is_err());
        let cfg = ExperimentConfig::from_toml(&MINIMAL.replace("[16, 32, 64]", "[16, 64, 32]")).unwrap();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(ExperimentConfig::from_toml(&format!("{MINIMAL}\n[eval]\nbogus = 1\n")).is_err());
    }
}
