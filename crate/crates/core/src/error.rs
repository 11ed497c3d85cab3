use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Input file does not match its schema. `row` is 1-based over data rows.
    #[error("{path}: row {row}: {message}")]
    Schema {
        path: String,
        row: usize,
        message: String,
    },

    #[error("invalid dataset: {0}")]
    Dataset(String),

    #[error("cannot split choosers: {0}")]
    Split(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("graph error: {0}")]
    Graph(String),

    #[error("graph generation failed: {0}")]
    Generation(String),

    #[error("objective diverged at epoch {epoch}: value {value}")]
    Divergence { epoch: usize, value: f64 },

    #[error("scenario leaves chooser {chooser} with an empty choice set")]
    Scenario { chooser: String },

    #[error("evaluation error: {0}")]
    Evaluation(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn schema(path: impl Into<String>, row: usize, message: impl Into<String>) -> Self {
        Error::Schema {
            path: path.into(),
            row,
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Stable machine-readable code, printed first on the CLI error line.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Schema { .. } => "E_SCHEMA",
            Error::Dataset(_) => "E_DATASET",
            Error::Split(_) => "E_SPLIT",
            Error::Config(_) => "E_CONFIG",
            Error::Argument(_) => "E_ARGUMENT",
            Error::Graph(_) => "E_GRAPH",
            Error::Generation(_) => "E_GENERATION",
            Error::Divergence { .. } => "E_DIVERGENCE",
            Error::Scenario { .. } => "E_SCENARIO",
            Error::Evaluation(_) => "E_EVALUATION",
            Error::Io { .. } => "E_IO",
            Error::Csv(_) => "E_CSV",
            Error::Json(_) => "E_JSON",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. } => 3,
            Error::Schema { .. } | Error::Csv(_) | Error::Json(_) | Error::Dataset(_) => 4,
            Error::Config(_) | Error::Argument(_) => 2,
            Error::Divergence { .. } => 5,
            _ => 1,
        }
    }
}
