use thiserror::Error;

/// Errors raised by the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    /// Malformed input bytes (bad magic, truncated header, invalid field).
    #[error("format error: {0}")]
    Format(String),
    /// Inputs that are individually valid but disagree with each other.
    #[error("consistency error: {0}")]
    Consistency(String),
    /// A caller-supplied value is out of range or shaped wrong.
    #[error("argument error: {0}")]
    Argument(String),
    /// A layer chain that cannot be assembled into a model.
    #[error("model spec error: {0}")]
    Spec(String),
    /// Non-finite values where finite ones are required.
    #[error("numeric error: {0}")]
    Numeric(String),
    /// A degenerate affinity graph (isolated vertex).
    #[error("degenerate graph: {0}")]
    Degenerate(String),
    /// A run configuration that failed to parse or validate.
    #[error("config error: {0}")]
    Config(String),
    /// A training phase that cannot proceed (e.g. single-class labeled set).
    #[error("training error: {0}")]
    Training(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
