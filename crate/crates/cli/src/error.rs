use phs_core::PhsError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Malformed or inconsistent input; `path` names the offending field.
    #[error("config error at {path}: {message}")]
    Config { path: String, message: String },

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("{0}")]
    Usage(String),

    #[error(transparent)]
    Compute(PhsError),
}

impl CliError {
    pub fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        CliError::Config {
            path: path.into(),
            message: message.into(),
        }
    }

    pub fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    /// Errors raised while turning config data into model objects are config errors; the
    /// field name carried by the model error becomes the path.
    pub fn from_model(prefix: &str, e: PhsError) -> Self {
        let join = |field: &str| {
            if prefix.is_empty() {
                field.to_string()
            } else {
                format!("{prefix}.{field}")
            }
        };
        match e {
            PhsError::InvalidInput { field, reason } => CliError::config(join(&field), reason),
            PhsError::Dimension { context, expected, found } => CliError::config(
                if prefix.is_empty() { context.clone() } else { prefix.to_string() },
                format!("{context}: expected dimension {expected}, found {found}"),
            ),
            other => CliError::Compute(other),
        }
    }

    pub fn exit_code(&self) -> i32 {
        1
    }
}

impl From<PhsError> for CliError {
    fn from(e: PhsError) -> Self {
        CliError::Compute(e)
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
