use crate::distributions::DistributionError;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConfigError {
    #[error(transparent)]
    Distribution(#[from] DistributionError),
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("policy `{policy}` is not valid for this configuration: {reason}")]
    IncompatiblePolicy { policy: String, reason: String },
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("invariant violation at t={time}: {detail}")]
    InvariantViolation { time: f64, detail: String },
}

impl SimError {
    pub(crate) fn violation(time: f64, detail: impl Into<String>) -> Self {
        Self::InvariantViolation {
            time,
            detail: detail.into(),
        }
    }
}
