use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("sentence is empty after normalization")]
    EmptySentence,

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("line {line}: unknown phoneme symbol `{symbol}`")]
    UnknownPhoneme { line: usize, symbol: String },

    #[error("unsupported format version `{0}`")]
    VersionMismatch(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("unknown token id {0}")]
    UnknownToken(u32),

    #[error("sequence needs {len} positions but the maximum length is {max}")]
    SequenceTooLong { len: usize, max: usize },

    #[error("id {id} out of range for {table} table with {rows} rows")]
    Index {
        table: &'static str,
        id: usize,
        rows: usize,
    },

    #[error("non-finite activation in layer {layer}")]
    Numerical { layer: usize },

    #[error("loss became non-finite at step {step}")]
    Diverged { step: usize },

    #[error("empty input")]
    EmptyInput,

    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error, PartialEq)]
pub enum CheckpointError {
    #[error("checkpoint: bad magic bytes")]
    BadMagic,
    #[error("checkpoint: stream truncated")]
    Truncated,
    #[error("checkpoint: checksum mismatch")]
    Checksum,
    #[error("checkpoint: unsupported dtype tag {0}")]
    Dtype(u8),
    #[error("checkpoint: bad config document: {0}")]
    Config(String),
    #[error("checkpoint: shape mismatch for `{name}`: expected {expected:?}, found {found:?}")]
    Shape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("checkpoint: tensor `{0}` missing or out of order")]
    Tensor(String),
}

impl Error {
    /// True for failures caused by numbers going bad rather than by the input data.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::Numerical { .. } | Error::Diverged { .. })
    }
}
