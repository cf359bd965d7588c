use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, CavError>;

#[derive(Debug, Error)]
pub enum CavError {
    #[error("invalid matrix: {0}")]
    InvalidMatrix(String),

    #[error("degenerate (zero-norm) vector for concept `{concept}`")]
    DegenerateVector { concept: String },

    #[error("concept `{concept}` has only one label class")]
    SingleClassConcept { concept: String },

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("loss became non-finite at epoch {epoch}; lower the learning rate")]
    NonFiniteLoss { epoch: usize },

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("infeasible correlation {source_idx} -> {target}: {reason}")]
    InfeasibleCorrelation {
        source_idx: usize,
        target: usize,
        reason: String,
    },

    #[error("unknown concept `{name}`; available: {}", available.join(", "))]
    UnknownConcept { name: String, available: Vec<String> },

    #[error("parse error in {context}: {message}")]
    Parse { context: String, message: String },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CavError {
    /// Attach a concept name to errors raised by single-column routines.
    pub(crate) fn for_concept(self, name: &str) -> Self {
        match self {
            CavError::SingleClassConcept { .. } => CavError::SingleClassConcept {
                concept: name.to_owned(),
            },
            CavError::DegenerateVector { .. } => CavError::DegenerateVector {
                concept: name.to_owned(),
            },
            other => other,
        }
    }

    pub(crate) fn parse(context: impl Into<String>, message: impl Into<String>) -> Self {
        CavError::Parse {
            context: context.into(),
            message: message.into(),
        }
    }
}
