use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Model or prior configuration is inconsistent.
    #[error("configuration error: {0}")]
    Config(String),

    #[error("unknown covariate `{0}`")]
    UnknownCovariate(String),

    /// A density or transform was evaluated outside its domain.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// Input data violates a schema or model invariant.
    #[error("data error: {0}")]
    Data(String),

    /// Log density or gradient was not finite at the requested point.
    #[error("evaluation failure: {0}")]
    Evaluation(String),

    #[error("sampler error: {0}")]
    Sampler(String),

    /// No chain produced usable draws.
    #[error("all chains failed: {0}")]
    AllChainsFailed(String),

    #[error("estimator error: {0}")]
    Estimator(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("config parse error: {0}")]
    Toml(#[from] toml::de::Error),
}
