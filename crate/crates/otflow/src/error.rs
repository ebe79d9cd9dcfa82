use thiserror::Error;

/// Errors shared by every solver in the crate.
///
/// Anything recoverable by picking better inputs is `InvalidParameter` or one
/// of the structural mismatches; the remaining variants report a solver that
/// gave up and carry enough state to diagnose why.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("operation requires a {expected} grid")]
    GridKindMismatch { expected: &'static str },

    #[error("objects live on different grids or have different shapes: {0}")]
    ShapeMismatch(String),

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("advection CFL number {cfl:.3} exceeds 1.0 (dt too large for this field)")]
    CflExceeded { cfl: f64 },

    #[error(
        "conjugate gradient stalled after {iterations} iterations, residual {residual:.3e} (target {target:.3e})"
    )]
    CgStalled {
        iterations: usize,
        residual: f64,
        target: f64,
    },

    #[error(
        "auction did not terminate at eps={eps:.3e} with {unassigned} unassigned after {bids} bids"
    )]
    AuctionStalled {
        eps: f64,
        unassigned: usize,
        bids: usize,
    },

    #[error("exact assignment solver is capped at {cap} points, got {n}")]
    ExactCapExceeded { n: usize, cap: usize },

    #[error("solution norm grew by {growth:.3e}x in one step; time step unstable")]
    Unstable { growth: f64 },

    #[error("invariant violated: {what} reached {value:.6e}, limit {limit:.6e}")]
    InvariantViolated {
        what: String,
        value: f64,
        limit: f64,
    },

    #[error("stored assignment is stale: {0}")]
    StaleAssignment(String),

    #[error("{0}")]
    Io(#[from] std::io::Error),

    #[error("malformed {what}: {detail}")]
    Parse { what: &'static str, detail: String },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    pub fn shape(msg: impl Into<String>) -> Self {
        Error::ShapeMismatch(msg.into())
    }
}
