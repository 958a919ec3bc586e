use std::fs;
use std::path::Path;

use flowrate::rng::substream;
use flowrate::theory::TheoryBlock;
use flowrate_harness::report::{SlopeFlag, REPORT_FILE};
use flowrate_harness::run::{CELLS_FILE, CONFIG_FILE, RESULTS_FILE};
use flowrate_harness::{fit_slope, run, write_report, ExperimentConfig, RunOptions};
use rand::Rng as _;

const SMALL: &str = r#"
[target]
kind = "spline_mixture"
dim = 1
symmetric = true

[[schedule]]
family = "variance_preserving"

[[schedule]]
family = "affine"

[grid]
n = [32, 64, 128]
seeds = [0, 1]

[training]
mode = "kde"

[flow]
method = "rk4"
steps = 40
spacing = "graded_logarithmic"

[eval]
p = [1.0, 2.0]
estimator = "quantile"
n_eval = 256
"#;

fn run_in(text: &str, dir: &Path, parallel: usize) -> flowrate_harness::RunSummary {
    let cfg = ExperimentConfig::from_toml(text).unwrap();
    run(
        &cfg,
        &RunOptions {
            seed_offset: 0,
            parallel: Some(parallel),
            out: Some(dir.to_path_buf()),
        },
    )
    .unwrap()
}

#[test]
fn shipped_config_validates() {
    let text = include_str!("../configs/rate_trend_d1.toml");
    let cfg = ExperimentConfig::from_toml(text).unwrap();
    cfg.validate().unwrap();
    assert_eq!(cfg.grid.n, vec![128, 256, 512, 1024, 2048, 4096]);
    assert_eq!(cfg.grid.seeds.len(), 5);
    assert_eq!(cfg.smoothness().unwrap(), 3.0);
}

#[test]
fn invalid_configs_are_rejected() {
    let bad = [
        SMALL.replace("n = [32, 64, 128]", "n = []"),
        SMALL.replace("n = [32, 64, 128]", "n = [32, 64]"),
        SMALL.replace("seeds = [0, 1]", "seeds = []"),
        SMALL.replace("dim = 1", "dim = 2"),
        SMALL.replace("p = [1.0, 2.0]", "p = [0.5]"),
    ];
    for text in &bad {
        let cfg = ExperimentConfig::from_toml(text).unwrap();
        assert!(cfg.validate().is_err(), "accepted:\n{text}");
    }
    assert!(ExperimentConfig::from_toml(&SMALL.replace("mode = \"kde\"", "mode = \"bogus\"")).is_err());
}

#[test]
fn slope_fit_recovers_noisy_power_law() {
    let mut rng = substream(42, 0);
    let ns = [128.0, 256.0, 512.0, 1024.0, 2048.0, 4096.0];
    let trials = 100;
    let close = (0..trials)
        .filter(|_| {
            let pts: Vec<(f64, f64)> = ns
                .iter()
                .map(|&n: &f64| (n, 2.0 * n.powf(-0.5) * (1.0 + 0.1 * rng.random_range(-1.0..1.0))))
                .collect();
            (fit_slope(&pts).unwrap().slope + 0.5).abs() <= 0.1
        })
        .count();
    assert!(close >= 95, "{close} of {trials} within 0.1");
}

#[test]
fn theory_exponents_separate_schedules() {
    let vp = TheoryBlock::new(1.0, 2, 0.5, 0.0).unwrap();
    let affine = TheoryBlock::new(1.0, 2, 1.0, 0.0).unwrap();
    assert!((vp.upper_exponent - 0.5).abs() < 1e-15);
    assert!((affine.upper_exponent - 0.375).abs() < 1e-15);
}

#[test]
fn small_run_writes_artifacts_deterministically() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let summary = run_in(SMALL, &a, 1);
    assert_eq!((summary.total, summary.failed), (12, 0));
    run_in(SMALL, &b, 3);
    for file in [RESULTS_FILE, CELLS_FILE, CONFIG_FILE, REPORT_FILE] {
        assert!(a.join(file).exists(), "{file} missing");
        assert_eq!(fs::read(a.join(file)).unwrap(), fs::read(b.join(file)).unwrap(), "{file} differs");
    }

    let csv = fs::read_to_string(a.join(RESULTS_FILE)).unwrap();
    assert_eq!(csv.lines().count(), 1 + 12 * 2);
    assert!(csv.lines().skip(1).all(|l| l.split(',').count() == 9));

    let first = fs::read(a.join(REPORT_FILE)).unwrap();
    let report = write_report(&a).unwrap();
    assert_eq!(first, fs::read(a.join(REPORT_FILE)).unwrap());
    assert_eq!(report.slopes.len(), 4);
    for row in &report.slopes {
        assert!(row.mean_values.iter().all(|v| v.is_some_and(|v| v > 0.0)));
        let slope = row.slope.unwrap();
        assert!(slope < 0.0, "{} p={} slope {slope}", row.schedule, row.p);
        assert_eq!(row.flag, Some(SlopeFlag::classify(slope, row.theory_exponent)));
    }
    assert!(a.join("plots").join("vp_p1.dat").exists());
}

#[test]
fn failed_cells_become_null_with_a_reason() {
    let text = SMALL
        .replace("estimator = \"quantile\"", "estimator = \"sinkhorn\"\nsinkhorn_iters = 1\nreference_size = 64")
        .replace("n_eval = 256", "n_eval = 64")
        .replace("seeds = [0, 1]", "seeds = [0]");
    let tmp = tempfile::tempdir().unwrap();
    let summary = run_in(&text, tmp.path(), 1);
    assert_eq!(summary.failed, summary.total);
    assert!(summary.too_many_failures());
    let report = write_report(tmp.path()).unwrap();
    assert!(report.cells.iter().all(|c| c.w_value.is_none() && c.failure.is_some()));
    assert!(report.slopes.iter().all(|r| r.slope.is_none() && r.flag.is_none()));
    let csv = fs::read_to_string(tmp.path().join(RESULTS_FILE)).unwrap();
    assert!(csv.lines().skip(1).all(|l| l.split(',').nth(6) == Some("")));
}

#[test]
fn oracle_and_trained_modes_complete() {
    let oracle = SMALL.replace("mode = \"kde\"", "mode = \"oracle\"\nt0 = 0.01");
    let trained = SMALL
        .replace("mode = \"kde\"", "mode = \"trained\"\npartition = \"dyadic\"\nt0 = 0.01")
        .replace("seeds = [0, 1]", "seeds = [0]")
        + "\n[optimizer]\nsteps = 60\nbatch = 64\n\n[model]\nwidth_factor = 2.0\n";
    for text in [oracle, trained] {
        let tmp = tempfile::tempdir().unwrap();
        let summary = run_in(&text, tmp.path(), 1);
        assert_eq!(summary.failed, 0, "{text}");
        let report = write_report(tmp.path()).unwrap();
        assert!(report.cells.iter().all(|c| c.w_value.is_some_and(|v| v.is_finite() && v > 0.0)));
    }
}
