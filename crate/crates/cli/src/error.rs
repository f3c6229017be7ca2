use dspl_core::model::{EngineError, ModelError};
use dspl_core::oracle::OracleError;
use dspl_core::syntax::ParseError;
use dspl_core::trainer::TrainError;
use serde_json::{json, Value};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("{0}")]
    Model(#[from] ModelError),
    #[error("query `{query}`: {source}")]
    Engine { query: String, source: EngineError },
    #[error("{0}")]
    Train(#[from] TrainError),
    #[error("query `{query}`: {source}")]
    Oracle { query: String, source: OracleError },
}

impl CliError {
    fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "UsageError",
            CliError::Io { .. } | CliError::Model(ModelError::Io { .. }) => "IoError",
            CliError::Model(ModelError::Parse(ParseError::Syntax(_))) => "SyntaxError",
            CliError::Model(ModelError::Parse(ParseError::Validation(_))) => "ValidationError",
            CliError::Model(ModelError::Data { .. }) => "DataError",
            CliError::Model(ModelError::Param(_)) => "ParameterError",
            CliError::Engine { source, .. } => source.kind(),
            CliError::Train(TrainError::Example { source, .. }) => source.kind(),
            CliError::Train(TrainError::Dataset { .. }) => "DatasetError",
            CliError::Train(_) => "TrainingError",
            CliError::Oracle { .. } => "OracleError",
        }
    }

    /// Diagnostic object printed on failure.
    pub fn to_json(&self) -> Value {
        let mut err = json!({ "kind": self.kind(), "message": self.to_string() });
        match self {
            CliError::Model(ModelError::Parse(p)) => {
                let (line, col) = p.position();
                err["line"] = json!(line);
                err["col"] = json!(col);
            }
            CliError::Engine { query, .. } | CliError::Oracle { query, .. } => err["query"] = json!(query),
            CliError::Train(t) => {
                if let Some(i) = t.example_index() {
                    err["example"] = json!(i);
                }
            }
            _ => {}
        }
        json!({ "error": err })
    }
}
