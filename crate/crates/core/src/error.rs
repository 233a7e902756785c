use std::path::PathBuf;

use thiserror::Error;

use crate::kgdata::{EntityId, RelationId};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: expected 3 tab-separated fields, found {found}")]
    Parse {
        path: PathBuf,
        line: usize,
        found: usize,
    },

    #[error("{0}: file contains no triples")]
    EmptyFile(PathBuf),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("graph is already augmented with inverse relations")]
    AlreadyAugmented,

    #[error("operation requires a graph augmented with inverse relations")]
    NotAugmented,

    #[error("relation {0} has no training triples")]
    RelationAbsent(RelationId),

    #[error("frequency count must be at least 1")]
    ZeroFrequency,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("no walk realises path {path} from entity {head} to entity {tail}")]
    NoWitness {
        head: EntityId,
        tail: EntityId,
        path: String,
    },

    #[error("negative sampling gave up after {0} attempts")]
    SamplingExhausted(usize),

    #[error("non-finite loss at epoch {epoch} (triple #{index}: {detail})")]
    NonFinite {
        epoch: usize,
        index: usize,
        detail: String,
    },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("malformed {kind} file: {detail}")]
    Format { kind: &'static str, detail: String },

    #[error("invariant violated: {0}")]
    Invariant(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
