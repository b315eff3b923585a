use thiserror::Error;

use crate::preferences::Violation;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid schema: {0}")]
    Schema(String),

    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("invalid model: {0}")]
    Model(String),

    #[error("training diverged: {0}")]
    Training(String),

    #[error("invalid preference profile: {}", format_violations(.0))]
    InvalidProfile(Vec<Violation>),

    #[error("no actionable features in schema")]
    NoActionableFeatures,

    #[error("instance is already classified favorably (p = {0:.4})")]
    AlreadyPositive(f64),

    #[error("feature `{feature}` value {value} lies outside its allowed range [{lower}, {upper}]")]
    InstanceOutOfBounds {
        feature: String,
        value: f64,
        lower: f64,
        upper: f64,
    },

    #[error("action modifies non-actionable feature `{0}`")]
    NonActionableChange(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("empty input: {0}")]
    Empty(String),
}

fn format_violations(v: &[Violation]) -> String {
    v.iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}
