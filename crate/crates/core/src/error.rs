use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("sampler exceeded {0} rejection attempts; random source looks broken")]
    RejectionCap(u64),

    #[error("trajectory exceeded the step cap of {0}")]
    StepCap(u64),

    #[error("root bracketing failed: {0}")]
    Bracketing(String),

    #[error("extrapolation did not converge: {0}")]
    NonConvergence(String),

    #[error("quadrature failed: {0}")]
    Quadrature(String),

    #[error("singular linear system: {0}")]
    Singular(String),

    #[error("fit failed: {0}")]
    Fit(String),

    #[error("invalid configuration field `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }
}
