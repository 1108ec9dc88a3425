//! Error types shared across the crate.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors produced by model construction, matrix building, solving, and
/// estimation.
#[derive(Error, Debug)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("invalid value for {what}: {detail}")]
    InvalidValue { what: &'static str, detail: String },

    #[error("{what} must be nonempty")]
    Empty { what: &'static str },

    #[error("index {index} out of range for {what} of length {len}")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        len: usize,
    },

    #[error("combination order {order} out of range 1..={max}")]
    OrderOutOfRange { order: usize, max: usize },

    #[error("problem size too large: {what} = {value} exceeds supported limit {limit}")]
    TooLarge {
        what: &'static str,
        value: usize,
        limit: usize,
    },

    #[error("non-finite entry encountered in {context}")]
    NonFinite { context: &'static str },

    #[error(
        "candidate budget exceeded: {candidates} candidates > limit 2^{budget_bits}; \
         feasible strategies: {feasible}"
    )]
    BudgetExceeded {
        candidates: u128,
        budget_bits: u32,
        feasible: String,
    },

    #[error("candidate set is empty after applying constraints")]
    EmptyCandidateSet,

    #[error("anchor rows do not form a complete matrix; missing unit rows for attributes {missing:?}")]
    IncompleteAnchor { missing: Vec<usize> },

    #[error("cannot align attribute labels across item groups: {detail}")]
    IrreconcilableAlignment { detail: String },

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}
