use std::io;

pub type Result<T, E = CliError> = std::result::Result<T, E>;

/// Process exit status for a usage error (bad flags or arguments).
pub const EXIT_USAGE: i32 = 2;
/// Process exit status for unusable input data.
pub const EXIT_DATA: i32 = 3;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("{0}")]
    Data(String),

    #[error("{path}: {source}")]
    File { path: String, source: io::Error },

    #[error(transparent)]
    Core(#[from] semisup::Error),
}

impl CliError {
    pub fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        CliError::Data(msg.into())
    }

    pub fn file(path: impl AsRef<std::path::Path>, source: io::Error) -> Self {
        CliError::File {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Core(semisup::Error::InvalidArgument(_)) => EXIT_USAGE,
            _ => EXIT_DATA,
        }
    }
}
