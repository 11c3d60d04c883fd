use std::io;
use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("missing {artifact}: {} does not exist", path.display())]
    Missing { artifact: &'static str, path: PathBuf },

    #[error("{}:{line}: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("checkpoint {}: {message}", path.display())]
    Checkpoint { path: PathBuf, message: String },

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Core(#[from] mocosa_core::Error),
}

impl CliError {
    /// Stable short code for the machine-readable error line.
    pub fn code(&self) -> &'static str {
        match self {
            CliError::Missing { .. } => "missing-input",
            CliError::Parse { .. } => "parse",
            CliError::Io { .. } => "io",
            CliError::Checkpoint { .. } => "checkpoint",
            CliError::Config(_) => "config",
            CliError::Core(_) => "core",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Missing { .. } | CliError::Config(_) => 2,
            _ => 1,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
