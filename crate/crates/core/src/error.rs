use thiserror::Error;

/// Errors raised by the estimation library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("unit {0} has no neighbors; drop it before row standardization")]
    IsolatedUnit(usize),

    #[error("rho = {rho} is outside the admissible interval ({lower}, {upper})")]
    RhoOutOfBounds { rho: f64, lower: f64, upper: f64 },

    #[error("spectrum unavailable: {0}")]
    Spectrum(String),

    #[error("GAL format error at line {line}: {msg}")]
    Gal { line: usize, msg: String },

    #[error("{0}")]
    Unsupported(String),

    #[error("optimization failed: {0}")]
    Optimization(String),

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
