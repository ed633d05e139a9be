use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, HipeError>;

#[derive(Debug, Error)]
pub enum HipeError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("unsupported image format: {0}")]
    Format(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("solver did not converge{}: relative residual {residual:.3e} after {iterations} iterations", scale.map(|t| format!(" at scale {t}")).unwrap_or_default())]
    ConvergenceFailure {
        residual: f64,
        iterations: usize,
        scale: Option<usize>,
    },

    #[error("empty sequence: {0}")]
    EmptySequence(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
}

impl HipeError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        HipeError::Io {
            path: path.into(),
            source,
        }
    }

    /// Attach a scale index to a convergence failure; other errors pass through.
    pub fn at_scale(self, t: usize) -> Self {
        match self {
            HipeError::ConvergenceFailure {
                residual,
                iterations,
                ..
            } => HipeError::ConvergenceFailure {
                residual,
                iterations,
                scale: Some(t),
            },
            other => other,
        }
    }
}
