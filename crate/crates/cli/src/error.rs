use std::path::PathBuf;

use serde::Serialize;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] geoaux::Error),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("run directory {0} already exists (pass --overwrite to replace it)")]
    RunExists(PathBuf),
    #[error("rerun of {command} differs from its manifest in: {}", files.join(", "))]
    NotReproduced { command: String, files: Vec<String> },
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;

impl CliError {
    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Self {
        let path = path.into();
        move |source| CliError::Io { path, source }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Core(e) => e.kind(),
            CliError::Invalid(_) => "invalid_input",
            CliError::RunExists(_) => "run_exists",
            CliError::NotReproduced { .. } => "not_reproduced",
            CliError::Io { .. } => "io",
            CliError::Json(_) => "json",
            CliError::Csv(_) => "csv",
        }
    }

    /// Process exit status for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::NotReproduced { .. } => 3,
            CliError::Invalid(_) | CliError::RunExists(_) => 2,
            CliError::Core(geoaux::Error::Invalid(_) | geoaux::Error::TaskMismatch(_)) => 2,
            _ => 1,
        }
    }

    /// The error as the JSON object printed on stderr.
    pub fn to_json(&self) -> serde_json::Value {
        #[derive(Serialize)]
        struct Body<'a> {
            kind: &'a str,
            message: String,
            exit_code: i32,
        }
        serde_json::json!({
            "error": Body {
                kind: self.kind(),
                message: self.to_string(),
                exit_code: self.exit_code(),
            }
        })
    }
}
