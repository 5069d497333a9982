use std::path::{Path, PathBuf};

/// Errors produced anywhere in the labelling pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A file did not match its expected format. `location` is a byte offset
    /// or a line number, depending on the format.
    #[error("{}: {location}: {message}", path.display())]
    Format {
        path: PathBuf,
        location: String,
        message: String,
    },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("non-finite loss at instance {instance}: {detail}")]
    NonFiniteLoss { instance: usize, detail: String },

    /// Too few visible points were generated; the caller should draw again.
    #[error("resample required: {0}")]
    Resample(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub fn io(path: impl AsRef<Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().to_path_buf(),
            source,
        }
    }

    pub(crate) fn format_at_line(path: impl AsRef<Path>, line: usize, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.as_ref().to_path_buf(),
            location: format!("line {line}"),
            message: message.into(),
        }
    }

    pub(crate) fn format_at_byte(path: impl AsRef<Path>, offset: u64, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.as_ref().to_path_buf(),
            location: format!("byte {offset}"),
            message: message.into(),
        }
    }

    pub(crate) fn format(path: impl AsRef<Path>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.as_ref().to_path_buf(),
            location: "-".to_string(),
            message: message.into(),
        }
    }
}
