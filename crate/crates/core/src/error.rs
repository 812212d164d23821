use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("empty probability vector")]
    EmptyVector,
    #[error("negative entry {value} at index {index}")]
    NegativeEntry { index: usize, value: f64 },
    #[error("non-finite entry at index {index}")]
    NonFinite { index: usize },
    #[error("probability vector has zero total mass")]
    ZeroMass,
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
    #[error("invalid label partition: {0}")]
    InvalidPartition(String),
    #[error("invalid action instance: {0}")]
    InvalidInstance(String),
    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("snippet {index} reached loss computation without a resolved supervision")]
    UnresolvedSupervision { index: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("cache was produced by parameter version {cache}, parameters are at version {params}")]
    StaleCache { cache: u64, params: u64 },
    #[error("non-finite gradient in {tensor}")]
    NonFiniteGradient { tensor: &'static str },
    #[error("no labeled videos to train on")]
    EmptyLabeledSet,
    #[error("ground truth missing for snippet {index}")]
    MissingGroundTruth { index: usize },
    #[error("cannot place {instances} instances in video {video} of {snippets} snippets")]
    InfeasiblePlacement {
        video: usize,
        instances: usize,
        snippets: usize,
    },
    #[error("bad magic bytes at offset 0")]
    BadMagic,
    #[error("unsupported format version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("corrupt record in video {video:?} at byte offset {offset}: {reason}")]
    CorruptRecord {
        video: Option<String>,
        offset: u64,
        reason: String,
    },
    #[error("class {class} has no ground-truth instances")]
    EmptyGroundTruth { class: usize },
    #[error("bad config field `{field}`: {reason}")]
    BadConfig { field: String, reason: String },
    #[error("missing artifact {}", path.display())]
    MissingArtifact { path: PathBuf },
    #[error("i/o error on {}: {message}", path.display())]
    Io { path: PathBuf, message: String },
}

impl Error {
    pub fn bad_config(field: &str, reason: impl Into<String>) -> Self {
        Error::BadConfig {
            field: field.to_string(),
            reason: reason.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, err: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            message: err.to_string(),
        }
    }
}
