use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use flowrate::partition::t_star_balance;
use flowrate::theory::{basis_count, min_stopping_exponent, TheoryBlock};
use flowrate_harness::{run, write_report, ExperimentConfig, HarnessError, RunOptions};

#[derive(Parser)]
#[command(name = "flowrate", about = "Flow-matching convergence-rate sweeps")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the sweep described by a config file.
    Run {
        config: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed_offset: u64,
        #[arg(long)]
        parallel: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Rebuild report.json and plots from a finished run directory.
    Report { dir: PathBuf },
    /// Check a config file without running it.
    Validate { config: PathBuf },
    /// Print the rate exponents and sizing rules for one configuration.
    Theory {
        #[arg(long)]
        s: f64,
        #[arg(long)]
        d: usize,
        #[arg(long)]
        kappa: f64,
        #[arg(long)]
        kappa_tilde: Option<f64>,
        #[arg(long, default_value_t = 0.0)]
        delta: f64,
        #[arg(long)]
        n: Option<usize>,
    },
}

fn main() -> ExitCode {
    match execute(Cli::parse().command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn execute(command: Command) -> Result<ExitCode, HarnessError> {
    match command {
        Command::Run {
            config,
            seed_offset,
            parallel,
            out,
        } => {
            let cfg = ExperimentConfig::load(&config)?;
            let summary = run(
                &cfg,
                &RunOptions {
                    seed_offset,
                    parallel,
                    out,
                },
            )?;
            println!(
                "{} cells, {} failed; results in {}",
                summary.total,
                summary.failed,
                summary.dir.display()
            );
            if summary.too_many_failures() {
                eprintln!("more than 20% of cells failed");
                return Ok(ExitCode::FAILURE);
            }
        }
        Command::Report { dir } => {
            let report = write_report(&dir)?;
            for row in &report.slopes {
                let slope = row.slope.map_or("n/a".to_string(), |s| format!("{s:.3}"));
                println!(
                    "{:<12} p={} slope {slope} vs theory -{:.3} {:?}",
                    row.schedule, row.p, row.theory_exponent, row.flag
                );
            }
        }
        Command::Validate { config } => {
            ExperimentConfig::load(&config)?.validate()?;
            println!("ok");
        }
        Command::Theory {
            s,
            d,
            kappa,
            kappa_tilde,
            delta,
            n,
        } => {
            let block = TheoryBlock::new(s, d, kappa, delta)?;
            let mut out = serde_json::to_value(&block).expect("theory block serializes");
            out["stopping_exponent"] = min_stopping_exponent(s, kappa, kappa_tilde.unwrap_or(kappa)).into();
            if let Some(n) = n {
                out["n"] = n.into();
                out["basis_count"] = basis_count(n, s, d).into();
                out["t_star"] = t_star_balance(n, s, d, kappa, delta).into();
            }
            println!("{}", serde_json::to_string_pretty(&out).expect("json"));
        }
    }
    Ok(ExitCode::SUCCESS)
}
