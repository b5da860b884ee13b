use thiserror::Error;

/// Errors produced by the catalog, model and inference layers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("catalog is empty after filtering")]
    EmptyCatalog,

    #[error("tied event times at t = {time}; pass a jitter to separate them")]
    TiedTimes { time: f64 },

    #[error("invalid observation window: {0}")]
    InvalidWindow(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("Omori integral over an unbounded interval diverges for p = {p}")]
    Divergent { p: f64 },

    #[error("legacy conversion is undefined at p = 1")]
    Conversion,

    #[error("prior density vanishes at {0}")]
    ZeroDensity(f64),

    #[error("Newton solve produced a non-finite step after {iterations} iterations")]
    NonFiniteStep {
        iterate: [f64; 5],
        iterations: usize,
    },

    #[error("exact log-posterior is -inf at every line-search candidate")]
    StepFailure,

    #[error("posterior did not converge; force the operation to use it anyway")]
    NotConverged,

    #[error("simulation exceeded {max_events} events (branching ratio {branching_ratio:.4})")]
    Overflow {
        max_events: usize,
        branching_ratio: f64,
    },

    #[error("degenerate input: {0}")]
    Degenerate(String),
}

pub type Result<T> = std::result::Result<T, Error>;
