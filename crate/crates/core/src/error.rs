use thiserror::Error;

use crate::autodiff::AutodiffError;
use crate::nn::EntityKind;

#[derive(Debug, Error)]
pub enum DairError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("{kind:?} entity has {got} features, network expects {expected}")]
    FeatureLength {
        kind: EntityKind,
        expected: usize,
        got: usize,
    },
    #[error("entity layout: {0}")]
    Layout(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("missing required config key `{0}`")]
    MissingKey(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("incompatible network: {0}")]
    Incompatible(String),
    #[error("trajectory dump, line {line}: {msg}")]
    Trajectory { line: usize, msg: String },
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("environment: {0}")]
    Env(String),
    #[error("non-finite {what} at update {update}")]
    NonFinite { what: String, update: u64 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, DairError>;
