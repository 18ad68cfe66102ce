use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A parameter violates its documented invariant.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// The operation is undefined at the requested point.
    #[error("domain error: {0}")]
    Domain(String),

    /// The input data cannot support the requested analysis.
    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("fit did not converge after {iterations} iterations (last residual {residual:.6e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("fit failed: {0}")]
    Fit(String),

    #[error("config error{}: {message}", line.map(|l| format!(" at line {l}")).unwrap_or_default())]
    Config { line: Option<usize>, message: String },

    #[error("malformed data file: {0}")]
    Format(String),

    #[error("cannot read {path}: {source}")]
    MissingInput {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    pub(crate) fn config(line: Option<usize>, msg: impl Into<String>) -> Self {
        Error::Config { line, message: msg.into() }
    }
}
