use std::io;
use std::path::PathBuf;

use thiserror::Error;

/// Every fallible operation in the crate reports through this type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Dimension {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("label {target} out of range for {classes} classes at row {row}")]
    LabelIndex {
        row: usize,
        target: usize,
        classes: usize,
    },

    #[error("label error: {0}")]
    Label(String),

    #[error("token id {id} out of range for vocabulary of {vocab_size} at position {position}")]
    Vocab {
        position: usize,
        id: u32,
        vocab_size: usize,
    },

    #[error("sequence too short: length {len}, need at least {required}")]
    SequenceTooShort { len: usize, required: usize },

    #[error("empty sequence: no valid (non-padding) positions")]
    EmptySequence,

    #[error("illegal residue {residue:?} at offset {offset}")]
    Alphabet { residue: char, offset: usize },

    #[error("config error: {0}")]
    Config(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("{}:{line}: {msg}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("average precision undefined: no positive labels")]
    UndefinedAp,

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn dim(op: &'static str, left: &[usize], right: &[usize]) -> Self {
        Error::Dimension {
            op,
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }
}
