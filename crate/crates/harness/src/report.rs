//! Report assembly: theory block, per-cell table, slope comparisons and
//! two-column plot files.

use std::fmt::Write as _;
use std::path::Path;

use flowrate::theory::{covering_log_bound, min_stopping_exponent, TheoryBlock};
use serde::Serialize;

use crate::fit::fit_slope;
use crate::run::{read_record, target_label, CellResult, RunRecord};
use crate::{write_file, HarnessError};

pub const REPORT_FILE: &str = "report.json";
pub const PLOT_DIR: &str = "plots";

/// Half-width of the band around the theory slope counted as consistent.
pub const SLOPE_TOLERANCE: f64 = 0.15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SlopeFlag {
    Consistent,
    /// Decays more slowly than the theory exponent.
    Shallower,
    Steeper,
}

impl SlopeFlag {
    /// Compares a fitted slope with `−exponent`.
    pub fn classify(slope: f64, exponent: f64) -> Self {
        let diff = slope + exponent;
        if diff.abs() <= SLOPE_TOLERANCE {
            SlopeFlag::Consistent
        } else if diff > 0.0 {
            SlopeFlag::Shallower
        } else {
            SlopeFlag::Steeper
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StoppingRow {
    pub n: usize,
    pub t0: f64,
    pub theta_n: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScheduleTheory {
    pub schedule: String,
    pub kappa: f64,
    pub kappa_tilde: f64,
    #[serde(flatten)]
    pub block: TheoryBlock,
    pub stopping_exponent: f64,
    pub stopping: Vec<StoppingRow>,
    /// `S · L · ln(W B n / ε)` at `ε = 1/n` for the largest trained network.
    pub covering_log_bound: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellRow {
    pub schedule: String,
    pub kappa: f64,
    pub n: usize,
    pub seed: u64,
    pub p: f64,
    pub w_value: Option<f64>,
    pub t0: f64,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SlopeRow {
    pub schedule: String,
    pub kappa: f64,
    pub p: f64,
    pub n: Vec<usize>,
    /// Seed average at each `n`; `None` when every seed failed.
    pub mean_values: Vec<Option<f64>>,
    pub slope: Option<f64>,
    pub stderr: Option<f64>,
    pub seed_slopes: Vec<Option<f64>>,
    pub theory_exponent: f64,
    pub flag: Option<SlopeFlag>,
    /// Steps where the seed average increases with `n`.
    pub inversions: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub target: String,
    pub mode: String,
    pub seed_offset: u64,
    pub theory: Vec<ScheduleTheory>,
    pub cells: Vec<CellRow>,
    pub slopes: Vec<SlopeRow>,
    pub slope_tolerance: f64,
    pub note: String,
}

impl Report {
    pub fn slope(&self, schedule: &str, p: f64) -> Option<&SlopeRow> {
        self.slopes.iter().find(|r| r.schedule == schedule && r.p == p)
    }
}

/// Builds the report from a run directory.
pub fn build_report(record: &RunRecord) -> Result<Report, HarnessError> {
    let cfg = &record.config;
    let target = cfg.target.build()?;
    let (s, d, delta) = (target.smoothness(), cfg.target.dim, cfg.training.delta);

    let mut theory = Vec::new();
    let mut slopes = Vec::new();
    for schedule in &cfg.schedules {
        let id = schedule.id();
        let cells: Vec<&CellResult> = record.cells.iter().filter(|c| c.schedule == id).collect();
        let block = TheoryBlock::new(s, d, schedule.kappa(), delta)?;
        let stopping = cfg
            .grid
            .n
            .iter()
            .filter_map(|&n| cells.iter().find(|c| c.n == n))
            .map(|c| StoppingRow {
                n: c.n,
                t0: c.t0,
                theta_n: c.details.as_ref().map(|d| d.theta_n),
            })
            .collect();
        let covering = cells
            .iter()
            .rev()
            .find_map(|c| c.details.as_ref().and_then(|d| d.complexity).map(|k| (c.n, k)))
            .and_then(|(n, k)| {
                covering_log_bound(
                    k.nonzero as f64,
                    k.depth as f64,
                    k.max_width as f64,
                    k.max_abs.max(1.0),
                    1.0 / n as f64,
                    n as f64,
                )
                .ok()
            });

        for (pi, &p) in cfg.eval.p.iter().enumerate() {
            slopes.push(slope_row(cfg.grid.n.as_slice(), &cfg.grid.seeds, &cells, pi, p, &id, schedule.kappa(), block.upper_exponent));
        }
        theory.push(ScheduleTheory {
            schedule: id,
            kappa: schedule.kappa(),
            kappa_tilde: schedule.kappa_tilde(),
            stopping_exponent: min_stopping_exponent(s, schedule.kappa(), schedule.kappa_tilde()),
            block,
            stopping,
            covering_log_bound: covering,
        });
    }

    let cells = record
        .cells
        .iter()
        .flat_map(|c| {
            cfg.eval.p.iter().zip(&c.values).map(move |(&p, v)| CellRow {
                schedule: c.schedule.clone(),
                kappa: c.kappa,
                n: c.n,
                seed: c.seed,
                p,
                w_value: *v,
                t0: c.t0,
                failure: if v.is_none() {
                    Some(c.failure.clone().unwrap_or_else(|| "no value recorded".into()))
                } else {
                    None
                },
            })
        })
        .collect();

    Ok(Report {
        target: target_label(&target),
        mode: cfg.training.mode.label().into(),
        seed_offset: record.seed_offset,
        theory,
        cells,
        slopes,
        slope_tolerance: SLOPE_TOLERANCE,
        note: "theory exponents omit poly(log n) factors, so slopes are compared modulo logarithms; \
               flags compare the seed-averaged slope with minus the upper-rate exponent"
            .into(),
    })
}

#[allow(clippy::too_many_arguments)]
fn slope_row(
    grid: &[usize],
    seeds: &[u64],
    cells: &[&CellResult],
    pi: usize,
    p: f64,
    id: &str,
    kappa: f64,
    exponent: f64,
) -> SlopeRow {
    let value = |n: usize, seed: u64| {
        cells
            .iter()
            .find(|c| c.n == n && c.seed == seed)
            .and_then(|c| c.values.get(pi).copied().flatten())
    };
    let mean_values: Vec<Option<f64>> = grid
        .iter()
        .map(|&n| {
            let vals: Vec<f64> = seeds.iter().filter_map(|&s| value(n, s)).collect();
            (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
        })
        .collect();
    let fit = |pts: Vec<(f64, f64)>| fit_slope(&pts).ok();
    let mean_fit = fit(grid
        .iter()
        .zip(&mean_values)
        .filter_map(|(&n, v)| v.map(|v| (n as f64, v)))
        .collect());
    let seed_slopes = seeds
        .iter()
        .map(|&s| fit(grid.iter().filter_map(|&n| value(n, s).map(|v| (n as f64, v))).collect()).map(|f| f.slope))
        .collect();
    let present: Vec<f64> = mean_values.iter().flatten().copied().collect();
    SlopeRow {
        schedule: id.into(),
        kappa,
        p,
        n: grid.to_vec(),
        inversions: present.windows(2).filter(|w| w[1] > w[0]).count(),
        mean_values,
        slope: mean_fit.map(|f| f.slope),
        stderr: mean_fit.map(|f| f.stderr),
        seed_slopes,
        theory_exponent: exponent,
        flag: mean_fit.map(|f| SlopeFlag::classify(f.slope, exponent)),
    }
}

fn plot_name(schedule: &str, p: f64) -> String {
    let clean: String = schedule
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '_' { c } else { '-' })
        .collect();
    format!("{clean}_p{p}.dat")
}

/// Reads `cells.json` in `dir` and writes `report.json` and `plots/*.dat`.
pub fn write_report(dir: &Path) -> Result<Report, HarnessError> {
    let record = read_record(dir)?;
    let report = build_report(&record)?;
    let path = dir.join(REPORT_FILE);
    let json = serde_json::to_string_pretty(&report).map_err(|e| HarnessError::Json {
        path: path.clone(),
        source: e,
    })?;
    write_file(&path, &(json + "\n"))?;

    for row in &report.slopes {
        let mut text = format!("# n mean_w{} ({}, seed average)\n", row.p, row.schedule);
        for (n, v) in row.n.iter().zip(&row.mean_values) {
            if let Some(v) = v {
                writeln!(text, "{n} {v}").unwrap();
            }
        }
        write_file(&dir.join(PLOT_DIR).join(plot_name(&row.schedule, row.p)), &text)?;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags() {
        assert_eq!(SlopeFlag::classify(-0.5, 0.5), SlopeFlag::Consistent);
        assert_eq!(SlopeFlag::classify(-0.3, 0.5), SlopeFlag::Shallower);
        assert_eq!(SlopeFlag::classify(-0.7, 0.5), SlopeFlag::Steeper);
    }

    #[test]
    fn plot_names_are_file_safe() {
        assert_eq!(plot_name("vp", 1.0), "vp_p1.dat");
        assert_eq!(plot_name("power_b1_k0.75_bt1_kt1.5", 2.0), "power_b1_k0-75_bt1_kt1-5_p2.dat");
    }
}
