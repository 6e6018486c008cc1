use thiserror::Error;

/// Errors raised by the model builders, solvers and detector.
#[derive(Debug, Error)]
pub enum RangingError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("unknown channel profile `{0}` (expected ped-a, ped-b or veh-a)")]
    UnknownProfile(String),

    #[error("dimension mismatch: {what} has length {got}, expected {expected}")]
    Dimension {
        what: &'static str,
        got: usize,
        expected: usize,
    },

    #[error("numerical failure in {stage} at iteration {iteration}: {reason}")]
    Numerical {
        stage: &'static str,
        iteration: usize,
        reason: String,
    },

    #[error("threshold search failed: {0}")]
    Threshold(String),

    #[error("config parse error: {0}")]
    ConfigParse(#[from] toml::de::Error),

    #[error("config serialization error: {0}")]
    ConfigWrite(#[from] toml::ser::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl RangingError {
    pub(crate) fn numerical(
        stage: &'static str,
        iteration: usize,
        reason: impl Into<String>,
    ) -> Self {
        RangingError::Numerical {
            stage,
            iteration,
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, RangingError>;
