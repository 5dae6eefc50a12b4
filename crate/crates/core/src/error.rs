use std::fmt;

use thiserror::Error;

/// Which standing assumption on the coefficients failed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum Hypothesis {
    VPositivity,
    KPositivity,
    QAtOrigin,
    Boundedness,
}

impl fmt::Display for Hypothesis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Hypothesis::VPositivity => "V-positivity",
            Hypothesis::KPositivity => "K-positivity",
            Hypothesis::QAtOrigin => "Q-at-origin",
            Hypothesis::Boundedness => "boundedness",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("hypothesis {hypothesis} violated at {witness:?} (value {value:e})")]
    HypothesisViolation {
        hypothesis: Hypothesis,
        witness: Vec<f64>,
        value: f64,
    },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("no ground state bracket for N={dim}, p={p}")]
    NoGroundState { dim: usize, p: f64 },
    #[error("tail fit failed: {0}")]
    TailFitFailure(String),
    #[error("fields live on different grids")]
    GridMismatch,
    #[error("peak at {xi:?} is closer than {margin} to the box boundary")]
    Margin { xi: Vec<f64>, margin: f64 },
    #[error("tangent basis is degenerate (Gram condition number {0:e})")]
    DegenerateBasis(f64),
    #[error("fixed-point iteration for the correction did not contract: {0}")]
    ContractionFailure(String),
    #[error("Krylov solve stalled after {iterations} iterations (relative residual {residual:e})")]
    LinearSolveStall { iterations: usize, residual: f64 },
    #[error("eigenvalue estimate stalled after {0} iterations")]
    EigEstimateStall(usize),
    #[error("Newton iteration diverged: {0}")]
    NewtonDivergence(String),
    #[error("maximum lies in the boundary layer at node {0:?}")]
    BoundaryPeak(Vec<usize>),
    #[error("field has no isolated maximum")]
    DegeneratePeak,
    #[error("not enough tail samples for a decay fit")]
    InsufficientTail,
    #[error("sweep jumped basins between eps={from} and eps={to} (jump {jump})")]
    SweepInconsistent { from: f64, to: f64, jump: f64 },
    #[error("order fit needs positive values, got {0:e}")]
    NonPositiveValue(f64),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
