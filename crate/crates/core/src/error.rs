use thiserror::Error;

/// Errors raised by the weight constructions, the heat solver and the
/// functional checks.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("time grid too coarse: {intervals} intervals (need at least {min})")]
    GridTooCoarse { intervals: usize, min: usize },

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("curves live on different time grids")]
    GridMismatch,

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("{what} residual {value:.3e} exceeds tolerance {tol:.3e}")]
    Residual { what: &'static str, value: f64, tol: f64 },

    #[error("sign check failed for {what}: {value:.3e} at t = {at:.6}")]
    Sign { what: &'static str, value: f64, at: f64 },

    #[error("two evaluations of {what} disagree by {value:.3e} (tolerance {tol:.3e})")]
    Disagreement { what: &'static str, value: f64, tol: f64 },

    #[error("chain violated at iterate {k}: {detail}")]
    Chain { k: usize, detail: String },

    #[error("tail mass fraction {fraction:.3e} exceeds {tol:.3e} (domain too small or weight defeats decay)")]
    TailViolation { fraction: f64, tol: f64 },

    #[error("potential exceeds its declared sup-norm: |V| = {value:.6} > {sup_norm:.6}")]
    PotentialBound { value: f64, sup_norm: f64 },

    #[error("time step too large: dt * |V| = {value:.3e} (limit {limit:.3e})")]
    StepTooLarge { value: f64, limit: f64 },

    #[error("no convergence after {iterations} iterations (sup|b| = {sup_b:.3e}, tol {tol:.3e})")]
    NonConvergence { iterations: usize, sup_b: f64, tol: f64 },

    #[error("singular point: {0}")]
    Singular(String),

    #[error("resampling error {value:.3e} above tolerance {tol:.3e}")]
    Resampling { value: f64, tol: f64 },

    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
