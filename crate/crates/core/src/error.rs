use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("file not found: {0}")]
    MissingFile(PathBuf),
    #[error("malformed row {row}: {reason}")]
    MalformedRow { row: usize, reason: String },
    #[error("corpus contains no usable records")]
    EmptyCorpus,
    #[error("tokenizer vocabulary not found: {0}")]
    VocabularyMissing(PathBuf),
    #[error("unknown dataset dialect `{0}` (expected rad or slake)")]
    UnknownDialect(String),
    #[error("record {index}: {reason}")]
    SchemaViolation { index: usize, reason: String },
    #[error("split is empty")]
    EmptySplit,
    #[error("record {index} has no question_type label")]
    MissingLabels { index: usize },
    #[error("cannot decode image {path}: {reason}")]
    DecodeFailure { path: PathBuf, reason: String },

    #[error("input resolution {got} does not match the backbone resolution {expected}")]
    ResolutionMismatch { expected: usize, got: usize },
    #[error("pretrained weights not found: {0}")]
    WeightsMissing(PathBuf),
    #[error("token id {id} outside vocabulary of size {vocab_size}")]
    TokenOutOfRange { id: u32, vocab_size: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("logit matrix is {rows}x{cols}, expected square")]
    NonSquare { rows: usize, cols: usize },
    #[error("cannot write checkpoint {path}: {reason}")]
    CheckpointWriteFailure { path: PathBuf, reason: String },
    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),
    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),

    #[error("word embedding asset not found: {0}")]
    EmbeddingAssetMissing(PathBuf),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("answer vocabulary is empty")]
    EmptyVocabulary,

    #[error("answer vocabulary does not match the checkpoint vocabulary")]
    VocabularyMismatch,
    #[error("prediction rows do not align with records: {0}")]
    AlignmentError(String),
    #[error("cannot write {path}: {reason}")]
    WriteFailure { path: PathBuf, reason: String },
    #[error("run {index}: {source}")]
    Run {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{0}")]
    Usage(String),
    #[error("config key `{key}`: {reason}")]
    Config { key: String, reason: String },

    #[error(transparent)]
    Candle(#[from] candle_core::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::ShapeMismatch(msg.into())
    }
}
