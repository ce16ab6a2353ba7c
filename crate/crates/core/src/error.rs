use thiserror::Error;

/// Errors raised by the stencil, grid, integration and study machinery.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("stencil offset {offset:?} exceeds the reach of a grid with {n} points per axis")]
    ReachExceeded { offset: Vec<i64>, n: usize },
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("invalid stencil: {0}")]
    InvalidStencil(String),
    #[error("CFL condition violated: dt-weighted rate {number:.6} exceeds 1")]
    CflViolation { number: f64 },
    #[error("non-finite state at step {step} (t = {time})")]
    Unstable { step: usize, time: f64 },
    #[error("linear solver did not converge at step {step}: residual {residual:e} after {iterations} iterations")]
    SolverDiverged {
        step: usize,
        iterations: usize,
        residual: f64,
    },
    #[error("errors at or below the floating point floor; no order can be fitted")]
    BelowFloor,
    #[error("no admissible weight scaling: {0}")]
    NoMargin(String),
    #[error("oracle unavailable: {0}")]
    OracleUnavailable(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for failures of the numerics themselves (instability, solver
    /// breakdown), as opposed to bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Unstable { .. }
                | Error::SolverDiverged { .. }
                | Error::CflViolation { .. }
                | Error::BelowFloor
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
