use std::path::{Path, PathBuf};

/// Exit statuses are part of the CLI contract.
pub const EXIT_OK: u8 = 0;
pub const EXIT_VALIDATION: u8 = 1;
pub const EXIT_IO: u8 = 2;
pub const EXIT_USAGE: u8 = 64;

#[derive(Debug, thiserror::Error)]
pub enum Failure {
    #[error(transparent)]
    Core(#[from] detkit::Error),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: {message}", path.display())]
    Config { path: PathBuf, message: String },

    #[error("{0}")]
    Invalid(String),
}

impl Failure {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Failure::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        Failure::Invalid(msg.into())
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Core(e) if e.is_io() => EXIT_IO,
            Failure::Io { .. } => EXIT_IO,
            _ => EXIT_VALIDATION,
        }
    }
}

pub type Outcome<T> = Result<T, Failure>;
