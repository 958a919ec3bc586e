//! Sweep driver: runs train → push → measure over a grid of sample sizes,
//! schedules and seeds, then fits log-log slopes against the theory exponents.

pub mod config;
pub mod fit;
pub mod report;
pub mod run;

use std::path::{Path, PathBuf};

pub use config::ExperimentConfig;
pub use fit::{fit_slope, SlopeFit};
pub use report::{write_report, Report};
pub use run::{run, CellResult, RunOptions, RunSummary};

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: malformed JSON: {source}")]
    Json {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error(transparent)]
    Core(#[from] flowrate::Error),
}

impl HarnessError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// Writes `contents` to `path`, creating parent directories.
pub(crate) fn write_file(path: &Path, contents: &str) -> Result<(), HarnessError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    }
    std::fs::write(path, contents).map_err(|e| HarnessError::io(path, e))
}
