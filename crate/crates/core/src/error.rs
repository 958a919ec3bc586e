use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("parameter error: {0}")]
    Parameter(String),
    #[error("singularity: {0}")]
    Singularity(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("size error: {0}")]
    Size(String),
    #[error("rejection sampler failed: acceptance rate {rate:.3e} after {tries} proposals")]
    Sampler { rate: f64, tries: u64 },
    #[error("training diverged at step {step} (interval {interval:?}): loss = {loss}")]
    Divergence {
        step: usize,
        interval: Option<usize>,
        loss: f64,
    },
    #[error("non-finite state at t = {t} after {step} steps (sample {sample:?}); last finite state {last:?}")]
    NonFinite {
        t: f64,
        step: usize,
        sample: Option<usize>,
        last: Vec<f64>,
    },
    #[error("overflow: {0}")]
    Overflow(String),
    #[error("quadrature tolerance not met: estimate {estimate}, error estimate {error}")]
    Tolerance { estimate: f64, error: f64 },
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
