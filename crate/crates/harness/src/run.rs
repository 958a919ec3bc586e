//! Grid execution: one cell per `(schedule, n, seed)`.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use flowrate::cfm::EmpiricalOracle;
use flowrate::field::VelocityField;
use flowrate::ode::{push_quantiles, push_samples, FlowConfig};
use flowrate::partition::{fixed_partition, train_partitioned, TimePartition};
use flowrate::points::Points;
use flowrate::rng::{derive_seed, substream};
use flowrate::schedules::Schedule;
use flowrate::targets::{TargetDensity, TargetKind};
use flowrate::theory::{basis_count, min_stopping_exponent, theta_n};
use flowrate::velocity_model::{Complexity, TrainConfig};
use flowrate::wasserstein::{resample, sinkhorn_w_p, w_p, w_p_sorted, EmpiricalMeasure};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::config::{Estimator, ExperimentConfig, Mode, PartitionMode, T0Mode};
use crate::{write_file, HarnessError};

const DATA_STREAM: u64 = 0xDA7A;
const TRAIN_STREAM: u64 = 0x7A1;
const PUSH_STREAM: u64 = 0x9E;
const REFERENCE_STREAM: u64 = 0x2EF;

pub const RESULTS_FILE: &str = "results.csv";
pub const CELLS_FILE: &str = "cells.json";
pub const CONFIG_FILE: &str = "config.toml";
pub const CSV_HEADER: &str = "target,schedule,kappa,n,seed,p,w_value,t0,mode";

/// Command-line overrides.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Added to every seed of the grid.
    pub seed_offset: u64,
    pub parallel: Option<usize>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionInfo {
    pub knots: Vec<f64>,
    pub basis_counts: Vec<usize>,
    pub j_star: usize,
    pub t_star: Option<f64>,
    pub t_star_off_grid: bool,
}

impl From<&TimePartition> for PartitionInfo {
    fn from(p: &TimePartition) -> Self {
        Self {
            knots: p.knots.clone(),
            basis_counts: p.basis_counts.clone(),
            j_star: p.j_star,
            t_star: p.t_star.is_finite().then_some(p.t_star),
            t_star_off_grid: p.flags.t_star_off_grid,
        }
    }
}

/// Per-interval probe losses before and after training.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntervalLoss {
    pub initial: f64,
    pub last: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellDetails {
    pub n_basis: usize,
    /// Convolution gap bound at the stopping time.
    pub theta_n: f64,
    pub partition: Option<PartitionInfo>,
    /// Largest network of the cell.
    pub complexity: Option<Complexity>,
    pub losses: Vec<IntervalLoss>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub schedule: String,
    pub kappa: f64,
    pub n: usize,
    pub seed: u64,
    pub t0: f64,
    pub t0_clipped: bool,
    /// One entry per configured `p`; `None` when that measurement failed.
    pub values: Vec<Option<f64>>,
    pub failure: Option<String>,
    pub details: Option<CellDetails>,
}

impl CellResult {
    pub fn failed(&self) -> bool {
        self.values.iter().any(Option::is_none)
    }
}

/// Everything `report` needs, stored next to the CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config: ExperimentConfig,
    pub seed_offset: u64,
    pub cells: Vec<CellResult>,
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub dir: PathBuf,
    pub total: usize,
    pub failed: usize,
}

impl RunSummary {
    /// More than a fifth of the cells failed.
    pub fn too_many_failures(&self) -> bool {
        5 * self.failed > self.total
    }
}

pub fn target_label(target: &TargetDensity) -> String {
    let kind = match target.kind() {
        TargetKind::Uniform => "uniform",
        TargetKind::SplineMixture => "spline_mixture",
        TargetKind::PerturbedUniform => "perturbed_uniform",
    };
    format!("{kind}_d{}", target.dim())
}

/// Stopping time of a cell: fixed, or `N^{−R₀}` floored at `t0_min`.
pub fn stopping_time(cfg: &ExperimentConfig, schedule: &Schedule, s: f64, n: usize) -> (f64, bool) {
    match cfg.training.t0_mode {
        T0Mode::Fixed => (cfg.training.t0, false),
        T0Mode::Theory => {
            let big_n = basis_count(n, s, cfg.target.dim) as f64;
            let r0 = min_stopping_exponent(s, schedule.kappa(), schedule.kappa_tilde());
            let raw = big_n.powf(-r0);
            (raw.max(cfg.training.t0_min), raw < cfg.training.t0_min)
        }
    }
}

/// Runs the whole grid, writes `results.csv`, `cells.json`, `config.toml`
/// and the report into the output directory.
pub fn run(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<RunSummary, HarnessError> {
    cfg.validate()?;
    let dir = opts.out.clone().unwrap_or_else(|| cfg.output.dir.clone());
    let parallel = opts.parallel.unwrap_or(cfg.output.parallel).max(1);
    let cells = run_cells(cfg, opts.seed_offset, parallel)?;

    let target = cfg.target.build()?;
    write_file(&dir.join(RESULTS_FILE), &results_csv(cfg, &target_label(&target), &cells))?;
    let record = RunRecord {
        config: cfg.clone(),
        seed_offset: opts.seed_offset,
        cells,
    };
    let json = serde_json::to_string_pretty(&record).map_err(|e| HarnessError::Json {
        path: dir.join(CELLS_FILE),
        source: e,
    })?;
    write_file(&dir.join(CELLS_FILE), &json)?;
    write_file(&dir.join(CONFIG_FILE), &cfg.to_toml())?;
    crate::report::write_report(&dir)?;

    let failed = record.cells.iter().filter(|c| c.failed()).count();
    Ok(RunSummary {
        dir,
        total: record.cells.len(),
        failed,
    })
}

/// Computes every cell on a pool of `parallel` threads. Results come back in
/// grid order whatever the thread count.
pub fn run_cells(cfg: &ExperimentConfig, seed_offset: u64, parallel: usize) -> Result<Vec<CellResult>, HarnessError> {
    let shared = Shared::new(cfg)?;
    let mut grid = Vec::new();
    for schedule in &cfg.schedules {
        for &n in &cfg.grid.n {
            for &seed in &cfg.grid.seeds {
                grid.push((*schedule, n, seed));
            }
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallel)
        .build()
        .map_err(|e| HarnessError::Config(format!("thread pool: {e}")))?;
    Ok(pool.install(|| {
        grid.par_iter()
            .map(|&(schedule, n, seed)| shared.cell(&schedule, n, seed, seed_offset))
            .collect()
    }))
}

fn results_csv(cfg: &ExperimentConfig, target: &str, cells: &[CellResult]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    let mode = cfg.training.mode.label();
    for c in cells {
        for (p, v) in cfg.eval.p.iter().zip(&c.values) {
            let value = v.map(|v| v.to_string()).unwrap_or_default();
            writeln!(out, "{target},{},{},{},{},{p},{value},{},{mode}", c.schedule, c.kappa, c.n, c.seed, c.t0).unwrap();
        }
    }
    out
}

/// Read-only state shared by all cells.
struct Shared<'a> {
    cfg: &'a ExperimentConfig,
    target: TargetDensity,
    s: f64,
    second_moment: f64,
    /// Target quantiles at levels `(i + ½)/n_eval` for the quantile estimator.
    quantiles: Option<Vec<f64>>,
}

impl<'a> Shared<'a> {
    fn new(cfg: &'a ExperimentConfig) -> Result<Self, HarnessError> {
        let target = cfg.target.build()?;
        let quantiles = if cfg.eval.estimator == Estimator::Quantile {
            let table = target.cdf_table()?;
            let m = cfg.eval.n_eval;
            Some((0..m).map(|i| table.quantile(&target, (i as f64 + 0.5) / m as f64)).collect())
        } else {
            None
        };
        Ok(Self {
            cfg,
            s: target.smoothness(),
            second_moment: target.second_moment()?,
            target,
            quantiles,
        })
    }

    fn cell(&self, schedule: &Schedule, n: usize, seed: u64, offset: u64) -> CellResult {
        let (t0, t0_clipped) = stopping_time(self.cfg, schedule, self.s, n);
        let mut cell = CellResult {
            schedule: schedule.id(),
            kappa: schedule.kappa(),
            n,
            seed,
            t0,
            t0_clipped,
            values: vec![None; self.cfg.eval.p.len()],
            failure: None,
            details: None,
        };
        let seed = seed.wrapping_add(offset);
        match self.measure_cell(schedule, n, seed, t0) {
            Ok((values, details)) => {
                let mut reasons = Vec::new();
                for (slot, (p, v)) in cell.values.iter_mut().zip(self.cfg.eval.p.iter().zip(values)) {
                    match v {
                        Ok(v) => *slot = Some(v),
                        Err(e) => reasons.push(format!("p = {p}: {e}")),
                    }
                }
                cell.failure = (!reasons.is_empty()).then(|| reasons.join("; "));
                cell.details = Some(details);
            }
            Err(e) => cell.failure = Some(e.to_string()),
        }
        cell
    }

    fn measure_cell(
        &self,
        schedule: &Schedule,
        n: usize,
        seed: u64,
        t0: f64,
    ) -> Result<(Vec<Result<f64, String>>, CellDetails), HarnessError> {
        let cfg = self.cfg;
        let d = cfg.target.dim;
        let data = self.target.sample(derive_seed(seed, &[n as u64, DATA_STREAM]), n)?;
        let big_n = basis_count(n, self.s, d);
        let mut details = CellDetails {
            n_basis: big_n,
            theta_n: theta_n(schedule, t0, self.second_moment, d)?,
            partition: None,
            complexity: None,
            losses: Vec::new(),
        };
        let flow = FlowConfig { t_end: t0, ..cfg.flow };
        let measured = match cfg.training.mode {
            Mode::Oracle => {
                let oracle = EmpiricalOracle::new(data, *schedule)?;
                self.measure_field(&oracle, &flow, n, seed)?
            }
            Mode::Trained => {
                let partition = match cfg.training.partition {
                    PartitionMode::Dyadic => {
                        fixed_partition(t0, big_n, self.s, d, schedule.kappa(), cfg.training.delta, 64)?
                    }
                    PartitionMode::Single => TimePartition::single(t0, big_n)?,
                };
                let train = TrainConfig {
                    seed: derive_seed(seed, &[n as u64, TRAIN_STREAM]),
                    ..cfg.optimizer
                };
                let (field, reports) = train_partitioned(&data, *schedule, &partition, &cfg.model, &train)?;
                details.partition = Some(PartitionInfo::from(&partition));
                details.complexity = field.parts().iter().map(|net| net.complexity()).max_by_key(|c| c.params);
                details.losses = reports
                    .iter()
                    .map(|r| IntervalLoss {
                        initial: r.initial_loss,
                        last: r.final_loss,
                    })
                    .collect();
                self.measure_field(&field, &flow, n, seed)?
            }
            Mode::Kde => {
                let bandwidth = schedule.eval(t0)?.sigma;
                self.measure_kde(&data, bandwidth, n, seed)?
            }
        };
        Ok((measured, details))
    }

    fn measure_field<V: VelocityField>(
        &self,
        field: &V,
        flow: &FlowConfig,
        n: usize,
        seed: u64,
    ) -> Result<Vec<Result<f64, String>>, HarnessError> {
        let m = self.cfg.eval.n_eval;
        if let Some(q) = &self.quantiles {
            let pushed = push_quantiles(field, m, flow)?;
            return Ok(self.compare_quantiles(&pushed, q));
        }
        let pushed = push_samples(field, derive_seed(seed, &[n as u64, PUSH_STREAM]), m, flow)?;
        self.compare_samples(&pushed, n, seed)
    }

    fn measure_kde(&self, data: &Points, bandwidth: f64, n: usize, seed: u64) -> Result<Vec<Result<f64, String>>, HarnessError> {
        let m = self.cfg.eval.n_eval;
        if let Some(q) = &self.quantiles {
            let mut centers = data.coords().to_vec();
            centers.sort_by(f64::total_cmp);
            let pushed: Vec<f64> = (0..m)
                .into_par_iter()
                .map(|i| mixture_quantile(&centers, bandwidth, (i as f64 + 0.5) / m as f64))
                .collect();
            return Ok(self.compare_quantiles(&pushed, q));
        }
        let mut rng = substream(derive_seed(seed, &[n as u64, PUSH_STREAM]), 0);
        let d = data.dim();
        let mut coords = Vec::with_capacity(m * d);
        for _ in 0..m {
            let j = rand::Rng::random_range(&mut rng, 0..data.len());
            for &y in data.row(j) {
                let e: f64 = StandardNormal.sample(&mut rng);
                coords.push(y + bandwidth * e);
            }
        }
        self.compare_samples(&Points::new(d, coords)?, n, seed)
    }

    fn compare_quantiles(&self, pushed: &[f64], target: &[f64]) -> Vec<Result<f64, String>> {
        self.cfg
            .eval
            .p
            .iter()
            .map(|&p| w_p_sorted(pushed, target, p).map_err(|e| e.to_string()))
            .collect()
    }

    fn compare_samples(&self, pushed: &Points, n: usize, seed: u64) -> Result<Vec<Result<f64, String>>, HarnessError> {
        let eval = &self.cfg.eval;
        let ref_seed = derive_seed(seed, &[n as u64, REFERENCE_STREAM]);
        let reference = self.target.sample(ref_seed, eval.reference_size)?;
        let values = eval
            .p
            .iter()
            .map(|&p| match eval.estimator {
                Estimator::Sinkhorn => {
                    let k = pushed.len().min(reference.len());
                    let a = EmpiricalMeasure::uniform(resample(pushed, k, ref_seed))?;
                    let b = EmpiricalMeasure::uniform(resample(&reference, k, ref_seed ^ 1))?;
                    let eps = eval.sinkhorn_eps * median_cost(a.points(), b.points(), p);
                    let r = sinkhorn_w_p(&a, &b, p, eps, eval.sinkhorn_iters)?;
                    if r.converged {
                        Ok(r.value)
                    } else {
                        Err(flowrate::Error::Tolerance {
                            estimate: r.value,
                            error: r.marginal_error,
                        })
                    }
                }
                _ => w_p(pushed, &reference, p, ref_seed),
            })
            .map(|r| r.map_err(|e| e.to_string()))
            .collect();
        Ok(values)
    }
}

/// Median of `‖a_i − b_j‖^p` over all pairs.
fn median_cost(a: &Points, b: &Points, p: f64) -> f64 {
    let mut costs: Vec<f64> = a
        .rows()
        .flat_map(|x| {
            b.rows()
                .map(move |y| x.iter().zip(y).map(|(u, v)| (u - v) * (u - v)).sum::<f64>().sqrt().powf(p))
        })
        .collect();
    let mid = costs.len() / 2;
    *costs.select_nth_unstable_by(mid, f64::total_cmp).1
}

/// Level-`u` quantile of `(1/n) Σ_j N(c_j, h²)` by bisection; `centers` sorted.
pub fn mixture_quantile(centers: &[f64], h: f64, u: f64) -> f64 {
    let normal = Normal::standard();
    let reach = 40.0 * h;
    let cdf = |x: f64| {
        // centers beyond the reach contribute exactly 0 or 1
        let lo = centers.partition_point(|&c| c < x - reach);
        let hi = centers.partition_point(|&c| c <= x + reach);
        let near: f64 = centers[lo..hi].iter().map(|c| normal.cdf((x - c) / h)).sum();
        (lo as f64 + near) / centers.len() as f64
    };
    let (mut a, mut b) = (centers[0] - reach, centers[centers.len() - 1] + reach);
    for _ in 0..200 {
        let mid = 0.5 * (a + b);
        if mid <= a || mid >= b {
            break;
        }
        if cdf(mid) < u {
            a = mid;
        } else {
            b = mid;
        }
    }
    0.5 * (a + b)
}

pub(crate) fn read_record(dir: &Path) -> Result<RunRecord, HarnessError> {
    let path = dir.join(CELLS_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| HarnessError::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| HarnessError::Json { path, source: e })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mixture_quantile_of_one_center() {
        let q = mixture_quantile(&[0.3], 0.1, 0.975);
        assert!((q - (0.3 + 0.1 * 1.959963984540054)).abs() < 1e-9);
        // a quarter of the mass sits below the left center
        assert!((mixture_quantile(&[-1.0, 1.0], 1e-3, 0.25) + 1.0).abs() < 1e-9);
    }

    #[test]
    fn median_cost_of_a_pair() {
        let a = Points::from_scalars(vec![0.0, 1.0]);
        let b = Points::from_scalars(vec![0.0, 3.0]);
        // costs 0, 3, 1, 2
        assert_eq!(median_cost(&a, &b, 1.0), 2.0);
    }
}
