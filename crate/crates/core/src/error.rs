use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("expansion order {m} exceeds the smoothness budget (at most {max} at this resolution)")]
    SmoothnessBudget { m: usize, max: usize },

    #[error("truncation insufficient: tail bound {bound:.3e} exceeds tolerance {tol:.3e} at M = {levels}")]
    TruncationInsufficient { bound: f64, tol: f64, levels: usize },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("evaluation point coincides with the apex")]
    ApexPoint,

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
