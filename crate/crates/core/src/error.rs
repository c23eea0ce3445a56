use thiserror::Error;

/// Errors raised by the statistic, test, planning and simulation routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("all points in variable {variable} are identical; no usable bandwidth scale")]
    AllPointsIdentical { variable: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("guard exceeded: {what} requires {count} evaluations, cap is {cap}")]
    GuardExceeded {
        what: &'static str,
        count: u128,
        cap: u128,
    },

    #[error("wrong arity: expected d = {expected}, got d = {got}")]
    WrongArity { expected: usize, got: usize },

    #[error("domain error: {0}")]
    DomainError(String),

    #[error("search exhausted: no B in [{lo}, {hi}] satisfies the coverage criterion")]
    SearchExhausted { lo: u64, hi: u64 },

    #[error("invalid input: {0}")]
    InvalidInput(String),
}

pub type Result<T> = std::result::Result<T, Error>;
