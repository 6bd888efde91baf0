use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("cannot write {path}: {source}")]
    Write {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {msg}")]
    Malformed {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    /// File had a header at most but no data rows.
    #[error("{path}: empty split (no data rows)")]
    EmptyFile { path: PathBuf },

    #[error("empty split")]
    EmptySplit,

    #[error("duplicate sentence_id \"{id}\"")]
    DuplicateId { id: String },

    #[error("ids and labels differ in length ({ids} vs {labels})")]
    LengthMismatch { ids: usize, labels: usize },

    #[error("empty batch")]
    EmptyBatch,

    #[error("non-finite logits")]
    NonFiniteLogits,

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("unknown language tag \"{0}\"")]
    UnknownLanguage(String),

    #[error("unknown split tag \"{0}\"")]
    UnknownSplit(String),

    #[error("backend {name}: {msg}")]
    Backend { name: String, msg: String },

    #[error("translation failed for sentence \"{id}\" after {attempts} attempts: {reason}")]
    Translation {
        id: String,
        attempts: u32,
        reason: String,
    },

    #[error("prediction ids do not match gold: {0}")]
    PredictionMismatch(String),

    #[error("{0}")]
    InvalidInput(String),

    #[error("stage {stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn at_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}
