use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QeflError {
    #[error("invalid architecture: {0}")]
    InvalidArchitecture(String),

    #[error("shape mismatch: expected {expected}, got {actual} ({context})")]
    ShapeMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("empty dataset")]
    EmptyDataset,

    #[error("non-finite gradient at coordinate {index}")]
    NonFiniteGradient { index: usize },

    #[error("no variants to select from")]
    NoVariants,

    #[error("no models to aggregate")]
    NoModels,

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("privacy loss is unbounded: noise std is zero")]
    UnboundedEpsilon,

    #[error("cannot shard {examples} examples across {clients} clients")]
    TooManyClients { clients: usize, examples: usize },

    #[error("idx format: {0}")]
    IdxFormat(String),

    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for QeflError {
    fn from(err: std::io::Error) -> Self {
        QeflError::Io(err.to_string())
    }
}

pub type Result<T> = std::result::Result<T, QeflError>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> QeflError {
    QeflError::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
