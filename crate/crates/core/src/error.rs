use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("duplicate {kind} `{id}`")]
    Duplicate { kind: &'static str, id: String },
    #[error("dataset `{dataset}` references unknown entity type `{entity}`")]
    DanglingReference { dataset: String, entity: String },
    #[error("entity type `{0}` is not used by any dataset")]
    OrphanEntity(String),
    #[error("unknown dataset `{0}`")]
    UnknownDataset(String),
    #[error("unknown entity type `{0}`")]
    UnknownEntity(String),
    #[error("unknown tag `{tag}` for dataset `{dataset}` (line {line})")]
    UnknownTag { dataset: String, tag: String, line: usize },
    #[error("line {line}: `{tag}` continues an entity that was never opened")]
    DanglingInside { tag: String, line: usize },
    #[error("line {line}: mention [{start}, {end}) is out of bounds for text of {len} characters")]
    OutOfBounds { line: usize, start: usize, end: usize, len: usize },
    #[error("line {line}: mentions [{a_start}, {a_end}) and [{b_start}, {b_end}) overlap")]
    Overlap { line: usize, a_start: usize, a_end: usize, b_start: usize, b_end: usize },
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("target grammar violation at character {position}: {message}")]
    Grammar { position: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    pub(crate) fn from_json(e: serde_json::Error, line_offset: usize) -> Self {
        Error::Parse { line: e.line() + line_offset, column: e.column(), message: e.to_string() }
    }
}
