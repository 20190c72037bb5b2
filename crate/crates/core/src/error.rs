use alloc::string::String;

/// Errors surfaced by the monitoring core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("record {id}: invalid field `{field}`: {reason}")]
    Validation {
        id: u64,
        field: &'static str,
        reason: String,
    },

    #[error("snapshot at calendar time {0} contains no enrolled patients")]
    EmptySnapshot(f64),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("patient {0} present at the earlier analysis is missing from the later one")]
    Alignment(u64),

    #[error("numerical consistency: {0}")]
    Numerical(String),

    #[error("unknown scenario `{0}`")]
    UnknownScenario(String),
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn arg(msg: impl Into<String>) -> Error {
    Error::Argument(msg.into())
}
