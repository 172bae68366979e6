use thiserror::Error;

/// Errors raised by the chain, rate, conjugate, bridge and estimation routines.
///
/// Infeasibility of a rate functional is not an error; it is encoded as
/// [`crate::ExtReal::PosInf`].
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("matrix must be square and non-empty, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },

    #[error("row {row} sums to {sum:e}, expected {expected}")]
    NonZeroRowSum { row: usize, sum: f64, expected: f64 },

    #[error("negative off-diagonal rate {value} at ({row}, {col})")]
    NegativeOffDiagonal { row: usize, col: usize, value: f64 },

    #[error("entry ({row}, {col}) = {value} is not a probability")]
    InvalidProbability { row: usize, col: usize, value: f64 },

    #[error("invalid probability vector: {0}")]
    InvalidProbVector(String),

    #[error("non-finite entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },

    #[error("chain is reducible: no unique invariant measure")]
    Reducible,

    #[error("negative input to relative entropy: s({a} | {b})")]
    NegativeInput { a: f64, b: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("state index {state} out of range for {n_states} states")]
    StateOutOfRange { state: usize, n_states: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("no convergence after {iterations} iterations (residual {residual:e}, best value {best_value})")]
    NonConvergence { iterations: usize, residual: f64, best_value: f64 },

    #[error("state {0} is absorbing")]
    AbsorbingState(usize),

    #[error("zero jump rate Q[{row}][{col}]; all off-diagonal rates must be positive")]
    ZeroRate { row: usize, col: usize },

    #[error("degenerate bridge: P[{from}][{to}]({horizon}) = 0")]
    DegenerateDenominator { from: usize, to: usize, horizon: f64 },

    #[error("rejection budget of {budget} attempts exhausted")]
    RejectionBudgetExceeded { budget: u64 },

    #[error("fewer than two grid points reached {min_hits} hits (largest usable n: {largest_usable:?})")]
    InsufficientHits { min_hits: u64, largest_usable: Option<usize> },

    #[error("empirical law needs at least one sample")]
    EmptyLaw,

    #[error("i/o error: {0}")]
    Io(String),

    #[error("config error: {0}")]
    Config(String),
}

impl Error {
    /// Stable variant name, used in machine-readable error records.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::NotSquare { .. } => "NotSquare",
            Error::NonZeroRowSum { .. } => "NonZeroRowSum",
            Error::NegativeOffDiagonal { .. } => "NegativeOffDiagonal",
            Error::InvalidProbability { .. } => "InvalidProbability",
            Error::InvalidProbVector(_) => "InvalidProbVector",
            Error::NonFinite { .. } => "NonFinite",
            Error::Reducible => "Reducible",
            Error::NegativeInput { .. } => "NegativeInput",
            Error::DimensionMismatch { .. } => "DimensionMismatch",
            Error::StateOutOfRange { .. } => "StateOutOfRange",
            Error::InvalidArgument(_) => "InvalidArgument",
            Error::NonConvergence { .. } => "NonConvergence",
            Error::AbsorbingState(_) => "AbsorbingState",
            Error::ZeroRate { .. } => "ZeroRate",
            Error::DegenerateDenominator { .. } => "DegenerateDenominator",
            Error::RejectionBudgetExceeded { .. } => "RejectionBudgetExceeded",
            Error::InsufficientHits { .. } => "InsufficientHits",
            Error::EmptyLaw => "EmptyLaw",
            Error::Io(_) => "Io",
            Error::Config(_) => "Config",
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
