use std::path::PathBuf;

/// Errors raised anywhere in the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("config error: {0}")]
    Config(String),
    #[error("column `{0}` not found in header")]
    MissingColumn(String),
    #[error("row {row}: {message}")]
    BadRow { row: usize, message: String },
    #[error("dataset too small: need at least {needed} samples, got {got}")]
    TooSmall { needed: usize, got: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("empty input")]
    EmptyInput,
    #[error("invalid quantile level grid: {0}")]
    InvalidLevels(String),
    #[error("invalid hyperparameter `{name}`: {message}")]
    InvalidHyperparameter { name: String, message: String },
    #[error("benchmark score must be positive, got {0}")]
    NonPositiveBenchmark(f64),
    #[error("learner `{learner}` failed: {source}")]
    Learner {
        learner: String,
        #[source]
        source: Box<Error>,
    },
    #[error("{0}")]
    WrongModelKind(String),
    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error("unsupported artifact format version {0}")]
    ArtifactVersion(u32),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn in_stage(stage: &'static str) -> impl FnOnce(Error) -> Error {
        move |e| Error::Stage { stage, source: Box::new(e) }
    }
}
