use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] degan_core::Error),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("output directory {0} is not empty; pass --resume to continue it")]
    OutputExists(PathBuf),
    #[error("checkpoint {path} is corrupt: digest {found} does not match recorded {recorded}")]
    Digest { path: PathBuf, recorded: String, found: String },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) trait IoContext<T> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T>;
}

impl<T> IoContext<T> for std::io::Result<T> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T> {
        self.map_err(|source| Error::Io { path: path.into(), source })
    }
}

pub(crate) fn format_error(path: impl Into<PathBuf>, message: impl std::fmt::Display) -> Error {
    Error::Format { path: path.into(), message: message.to_string() }
}
