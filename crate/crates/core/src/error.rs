use thiserror::Error;

/// Error type shared by every module of the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("schema error: expected column `{expected}`, found `{found}`")]
    Schema { expected: String, found: String },
    #[error("row {row}: {message}")]
    Row { row: usize, message: String },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("cohort too small: {0}")]
    Sizing(String),
    #[error("value outside domain: {0}")]
    Domain(String),
    #[error("non-finite value while evaluating `{param}`")]
    Numeric { param: String },
    #[error("expected {expected} parameters, found {found}")]
    Length { expected: usize, found: usize },
    #[error("invariant violated: {0}")]
    Invariant(String),
    #[error("fit failed: {0}")]
    Fit(String),
    #[error("metric undefined: {0}")]
    UndefinedMetric(String),
    #[error("data leakage detected: {0}")]
    Leakage(String),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Short category label, used by the CLI to pick an exit code.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Schema { .. } | Error::Row { .. } | Error::Csv(_) => "input",
            Error::Config(_) | Error::Length { .. } | Error::Invariant(_) => "config",
            Error::Sizing(_) | Error::Domain(_) => "domain",
            Error::Numeric { .. } => "numeric",
            Error::Fit(_) => "fit",
            Error::UndefinedMetric(_) => "metric",
            Error::Leakage(_) => "leakage",
            Error::Io(_) | Error::Json(_) => "io",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
