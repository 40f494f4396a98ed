use thiserror::Error;

/// Errors raised by field construction, operator assembly and the solvers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("mode (0,0) is excluded: fields are mean-zero")]
    ZeroMode,

    #[error("mode ({k1},{k2}) lies outside truncation N={n}")]
    OutsideTruncation { k1: i32, k2: i32, n: usize },

    #[error("duplicate entry for mode ({k1},{k2}) {parity}")]
    DuplicateEntry { k1: i32, k2: i32, parity: &'static str },

    #[error("truncation mismatch: expected N={expected}, got N={found}")]
    TruncationMismatch { expected: usize, found: usize },

    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("grid of size {grid} is too small (need at least {required})")]
    GridTooSmall { grid: usize, required: usize },

    #[error("invalid argument `{name}`: {reason}")]
    InvalidArgument { name: &'static str, reason: String },

    #[error("expected a {expected} operator, got {found}")]
    WrongOperatorKind { expected: &'static str, found: &'static str },

    #[error("{0}")]
    Parse(String),

    #[error("solver failed: {what} (residual {residual:e})")]
    Solver { what: String, residual: f64 },

    #[error("instability in member {member} at step {step}: |f| = {norm:e} exceeds bound {bound:e}")]
    Unstable { member: usize, step: usize, norm: f64, bound: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidArgument { name, reason: reason.into() }
}
