use thiserror::Error;

use crate::types::Violation;

#[derive(Debug, Error)]
pub enum LinalgError {
    #[error("matrix is not symmetric: |a[{row},{col}] - a[{col},{row}]| = {gap:e}")]
    Asymmetric { row: usize, col: usize, gap: f64 },
    #[error("matrix is not positive definite (pivot {pivot:e} at index {index})")]
    NotPositiveDefinite { index: usize, pivot: f64 },
    #[error("dimension mismatch: {0}")]
    Shape(String),
}

#[derive(Debug, Error)]
pub enum MsslError {
    #[error("input shape error: {0}")]
    Shape(String),
    #[error("covariate column {column} is constant")]
    DegenerateCovariate { column: usize },
    #[error("invalid dataset: {}", summarize(.0))]
    InvalidData(Vec<Violation>),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("numerical conditioning failure: {0}")]
    Conditioning(String),
    #[error("divergence at {context}: {detail}")]
    Divergence { context: String, detail: String },
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

fn summarize(violations: &[Violation]) -> String {
    let head: Vec<String> = violations.iter().take(5).map(|v| v.to_string()).collect();
    if violations.len() > 5 {
        format!("{} (and {} more)", head.join("; "), violations.len() - 5)
    } else {
        head.join("; ")
    }
}

impl MsslError {
    /// True for failures caused by the numbers rather than the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            MsslError::Conditioning(_) | MsslError::Divergence { .. } | MsslError::Linalg(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, MsslError>;
