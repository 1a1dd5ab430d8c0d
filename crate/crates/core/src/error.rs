use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("document `{doc_id}`: unclosed <{tag}> at byte {offset}")]
    UnclosedTag {
        doc_id: String,
        tag: String,
        offset: usize,
    },

    #[error("document `{doc_id}`: masked index {index} out of range for {len} elements")]
    IndexOutOfRange {
        doc_id: String,
        index: usize,
        len: usize,
    },

    #[error("query `{query_id}`: need {needed} negatives but only {available} non-relevant documents exist")]
    InsufficientNegatives {
        query_id: String,
        needed: usize,
        available: usize,
    },

    #[error("unknown document `{0}`")]
    MissingDocument(String),

    #[error("unknown query `{0}`")]
    MissingQuery(String),

    #[error("duplicate id `{0}`")]
    DuplicateId(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("no positives supplied to the contrastive loss")]
    EmptyPositives,

    #[error("non-finite loss on example `{0}`")]
    NonFiniteLoss(String),

    #[error("index was built with a different model (fingerprint {index} vs {model})")]
    ModelMismatch { index: String, model: String },

    #[error("qrels contain no relevant documents")]
    EmptyQrels,

    #[error("{path}, line {line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("bad magic bytes in {0}")]
    BadMagic(String),

    #[error("unsupported format version {found} (expected {expected})")]
    VersionMismatch { expected: u32, found: u32 },

    #[error("corrupt model table: {0}")]
    CorruptTable(String),

    #[error("corrupt index: {0}")]
    CorruptIndex(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
