use std::io;

/// Errors produced by the flexibility-design library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in `{field}`: expected {expected}, found {found}")]
    Dimension {
        field: String,
        expected: usize,
        found: usize,
    },

    #[error("`{field}` must be nonnegative, found {value} at index {index}")]
    Negative {
        field: String,
        index: usize,
        value: f64,
    },

    #[error("invalid `{field}`: {reason}")]
    Invalid { field: String, reason: String },

    #[error("malformed instance file: {0}")]
    Schema(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error("need at least {needed} demand samples, only {available} available")]
    NotEnoughSamples { needed: usize, available: usize },

    #[error("action {action} out of range for {count} actions")]
    ActionOutOfRange { action: usize, count: usize },

    #[error("episode already finished (step {step}, horizon {horizon})")]
    EpisodeFinished { step: usize, horizon: usize },

    #[error("design uses {arcs} arcs but the budget is {budget}")]
    BudgetExceeded { arcs: usize, budget: usize },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

impl Error {
    pub(crate) fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Invalid {
            field: field.into(),
            reason: reason.into(),
        }
    }

    /// True for errors caused by bad user input (files, flags) rather than numerics or I/O.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Dimension { .. }
                | Error::Negative { .. }
                | Error::Invalid { .. }
                | Error::Schema(_)
                | Error::NotEnoughSamples { .. }
                | Error::ActionOutOfRange { .. }
                | Error::EpisodeFinished { .. }
                | Error::BudgetExceeded { .. }
                | Error::Checkpoint(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
