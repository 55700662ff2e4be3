use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("file not found: {0}")]
    MissingFile(PathBuf),

    #[error("manifest {path}: {message}")]
    Manifest { path: PathBuf, message: String },

    #[error("unknown {attribute} category `{name}` (known: {known})")]
    UnknownCategory { attribute: String, name: String, known: String },

    #[error("duplicate manifest row for subject {subject}, pose {pose}, expression {expression}")]
    DuplicateRow { subject: String, pose: String, expression: String },

    #[error("image file referenced by manifest does not exist: {0}")]
    MissingImage(PathBuf),

    #[error("subjects missing their source image: {0:?}")]
    MissingSource(Vec<String>),

    #[error("invalid attribute schema: {0}")]
    InvalidSchema(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("shape mismatch in {context}: expected {expected:?}, got {actual:?}")]
    ShapeMismatch { context: String, expected: Vec<usize>, actual: Vec<usize> },

    #[error("condition dimension {actual} does not match the {expected} categories of the model")]
    ConditionMismatch { expected: usize, actual: usize },

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),

    #[error("image size mismatch between stages: {0} vs {1}")]
    SizeMismatch(usize, usize),

    #[error("non-finite {term} loss at step {step}")]
    NonFiniteLoss { term: &'static str, step: u64 },

    #[error("empty input: {0}")]
    Empty(String),

    #[error("checkpoint format version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("corrupt archive {path}: {message}")]
    CorruptArchive { path: PathBuf, message: String },

    #[error("duplicate method name in ablation table: {0}")]
    DuplicateMethod(String),

    #[error("missing evaluation pairs: {0:?}")]
    MissingPairs(Vec<String>),

    #[error("backend capability missing: {0}")]
    Capability(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image error on {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("config parse error in {path}: {message}")]
    ConfigParse { path: PathBuf, message: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
