use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across the toolkit.
///
/// Each variant maps onto one of the process exit codes used by the CLI
/// (see [`Error::exit_code`]).
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("schema error in {file}: missing column `{column}`")]
    MissingColumn { file: String, column: String },

    #[error("parse error in {file} at row {row}, column `{column}`: {message}")]
    Parse {
        file: String,
        row: usize,
        column: String,
        message: String,
    },

    #[error("duplicate bottom series key (item `{item}`, store `{store}`)")]
    DuplicateKey { item: String, store: String },

    #[error("inconsistent catalog: {0}")]
    InconsistentCatalog(String),

    #[error("unknown hierarchy level {0}")]
    UnknownLevel(usize),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("scale of series is undefined (constant training history)")]
    UndefinedScale,

    #[error("series sets differ; symmetric difference: {0:?}")]
    SeriesMismatch(Vec<String>),

    #[error("feature schema mismatch on columns: {0:?}")]
    SchemaMismatch(Vec<String>),

    #[error("training failed: {0}")]
    Training(String),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("missing artifacts in {dir}: {files:?}")]
    MissingArtifacts { dir: PathBuf, files: Vec<String> },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code: 2 config, 3 data, 4 training.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::InvalidArgument(_) => 2,
            Error::Training(_) | Error::UndefinedScale => 4,
            Error::Stage { source, .. } => source.exit_code(),
            _ => 3,
        }
    }

    pub(crate) fn at_stage(self, stage: &'static str) -> Error {
        match self {
            e @ Error::Stage { .. } => e,
            e => Error::Stage {
                stage,
                source: Box::new(e),
            },
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
