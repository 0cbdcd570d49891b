//! Error types shared across the crate.

use thiserror::Error;

use crate::detailed::OpCounter;

/// Invalid data handed to [`crate::FactoredMatrix`] constructors.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum FactorError {
    #[error("factor dimensions are inconsistent: U is {u_rows}x{u_cols}, sigma has {sigma_len} entries, V is {v_rows}x{v_cols}")]
    DimensionMismatch {
        u_rows: usize,
        u_cols: usize,
        sigma_len: usize,
        v_rows: usize,
        v_cols: usize,
    },
    #[error("rank {rank} exceeds min(m, n) = {limit}")]
    RankTooLarge { rank: usize, limit: usize },
    #[error("singular values must be finite, positive and nonincreasing (offending index {index}, value {value})")]
    InvalidSigma { index: usize, value: f64 },
    #[error("{which} does not have orthonormal columns (residual {residual:.3e}, tolerance {tolerance:.3e})")]
    NotOrthonormal {
        which: &'static str,
        residual: f64,
        tolerance: f64,
    },
    #[error("factor entries must be finite")]
    NonFinite,
}

/// Invalid [`crate::RankPolicy`] parameters.
#[derive(Debug, Clone, Error, PartialEq)]
#[error("rank-policy tolerances must be finite and nonnegative (abs_tol {abs_tol}, rel_tol {rel_tol})")]
pub struct PolicyError {
    pub abs_tol: f64,
    pub rel_tol: f64,
}

/// Failure of an iterative SVD backend. Carries the best iterate found so the
/// caller can decide whether it is still usable.
#[derive(Debug, Clone, Error)]
pub enum SvdError<T: crate::Scalar> {
    #[error("iterative SVD did not reach the requested accuracy after {sweeps} sweeps (worst residual {residual:.3e}, target {target:.3e})")]
    NotConverged {
        sweeps: usize,
        residual: f64,
        target: f64,
        best: crate::FactoredMatrix<T>,
    },
}

/// Errors from tangent-cone operations.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum ConeError {
    #[error("foot point has rank {rank} exceeding the bound r = {bound}")]
    RankExceedsBound { rank: usize, bound: usize },
    #[error("foot point has rank 0; the cone is the whole variety, use project_zero_foot")]
    ZeroFoot,
    #[error("matrix dimensions {lhs:?} and {rhs:?} do not match")]
    ShapeMismatch {
        lhs: (usize, usize),
        rhs: (usize, usize),
    },
}

/// Errors from the step maps.
#[derive(Debug, Clone, Error)]
pub enum StepError {
    /// The projected descent direction is numerically zero; no step can be
    /// taken from this point.
    #[error("descent direction is numerically zero (norm {norm:.3e} <= cutoff {cutoff:.3e})")]
    ZeroDirection {
        norm: f64,
        cutoff: f64,
        /// Operations spent before the abort, so callers can keep tallies honest.
        spent: OpCounter,
    },
    #[error("no step accepted after {max_backtracks} backtracks (last alpha {last_alpha:.3e}, f(x) = {f_x:.6e}, best candidate {best_candidate:.6e})")]
    BacktrackCapExceeded {
        max_backtracks: u32,
        last_alpha: f64,
        f_x: f64,
        best_candidate: f64,
        spent: OpCounter,
    },
    #[error("objective expects {expected:?}, iterate is {actual:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        actual: (usize, usize),
    },
    #[error(transparent)]
    Cone(#[from] ConeError),
}

impl StepError {
    /// Work already spent when the step aborted, if the variant tracks it.
    pub fn spent(&self) -> Option<&OpCounter> {
        match self {
            StepError::ZeroDirection { spent, .. }
            | StepError::BacktrackCapExceeded { spent, .. } => Some(spent),
            _ => None,
        }
    }
}

/// Invalid line-search hyperparameters.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum ParamError {
    #[error("line-search parameters out of range: {0}")]
    OutOfRange(String),
}

/// Problem-construction failures.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum ProblemError {
    #[error("rank bound {r} is not supported by this construction; supported: {supported}")]
    UnsupportedRank { r: usize, supported: String },
    #[error("instance parameters invalid: {0}")]
    InvalidParameter(String),
}

/// Driver-level failures (configuration, instance mismatch, I/O).
#[derive(Debug, Error)]
pub enum DriverError {
    #[error("configuration invalid: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Param(#[from] ParamError),
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error("step failed at iteration {iteration} (f = {f_value:.6e}, stationarity = {stationarity:.3e}): {source}")]
    Step {
        iteration: usize,
        f_value: f64,
        stationarity: f64,
        source: StepError,
    },
    #[error("compare requires at least two configurations")]
    TooFewConfigs,
    #[error("compare requires identical instances; config {index} differs from config 0")]
    InstanceMismatch { index: usize },
    #[error("i/o failure on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error(transparent)]
    Serde(#[from] serde_json::Error),
}

/// Parse errors for on-disk matrix formats.
#[derive(Debug, Error)]
pub enum FormatError {
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
    #[error("i/o failure on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("factors rejected after read: {0}")]
    Factor(#[from] FactorError),
}
