use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("usage: {0}")]
    Usage(String),

    #[error("invalid value: {0}")]
    InvalidValue(String),

    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: String, got: String },

    #[error("singular system: {0}")]
    Singular(String),

    #[error("manifest references missing file {0}")]
    MissingFile(PathBuf),

    #[error("content hash mismatch for {path}: manifest {expected}, file {actual}")]
    HashMismatch {
        path: PathBuf,
        expected: String,
        actual: String,
    },

    #[error("duplicate manifest key (id {id}, imp {imp})")]
    DuplicateKey { id: u64, imp: u64 },

    #[error("output path already exists: {0}")]
    PathCollision(PathBuf),

    #[error("malformed manifest line {line}: {reason}")]
    ManifestParse { line: usize, reason: String },

    #[error("training diverged at step {step}: {detail}")]
    Divergence { step: usize, detail: String },

    #[error("untrained or incomplete model: {0}")]
    Untrained(String),

    #[error("weights incompatible: {0}")]
    Incompatible(String),

    #[error("insufficient data: {0}")]
    Insufficient(String),

    #[error("config: {0}")]
    Config(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image codec: {0}")]
    Image(#[from] image::ImageError),

    #[error("tensor: {0}")]
    Tensor(#[from] candle_core::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Stable machine-readable code, shared by the CLI error JSON and the C ABI.
    pub fn code(&self) -> i32 {
        match self {
            Error::Usage(_) => 2,
            Error::InvalidValue(_) => 3,
            Error::Shape { .. } => 4,
            Error::Singular(_) => 5,
            Error::MissingFile(_) => 10,
            Error::HashMismatch { .. } => 11,
            Error::DuplicateKey { .. } => 12,
            Error::PathCollision(_) => 13,
            Error::ManifestParse { .. } => 14,
            Error::Divergence { .. } => 20,
            Error::Untrained(_) => 21,
            Error::Incompatible(_) => 22,
            Error::Insufficient(_) => 23,
            Error::Config(_) => 30,
            Error::Io { .. } => 40,
            Error::Image(_) => 41,
            Error::Tensor(_) => 50,
            Error::Json(_) => 51,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Error::Usage(_) => "usage",
            Error::InvalidValue(_) => "invalid_value",
            Error::Shape { .. } => "shape_mismatch",
            Error::Singular(_) => "singular_system",
            Error::MissingFile(_) => "missing_file",
            Error::HashMismatch { .. } => "hash_mismatch",
            Error::DuplicateKey { .. } => "duplicate_key",
            Error::PathCollision(_) => "path_collision",
            Error::ManifestParse { .. } => "manifest_parse",
            Error::Divergence { .. } => "divergence",
            Error::Untrained(_) => "untrained",
            Error::Incompatible(_) => "incompatible_weights",
            Error::Insufficient(_) => "insufficient_data",
            Error::Config(_) => "config",
            Error::Io { .. } => "io",
            Error::Image(_) => "image",
            Error::Tensor(_) => "tensor",
            Error::Json(_) => "json",
        }
    }
}

pub(crate) fn shape_err(expected: impl ToString, got: impl ToString) -> Error {
    Error::Shape {
        expected: expected.to_string(),
        got: got.to_string(),
    }
}
