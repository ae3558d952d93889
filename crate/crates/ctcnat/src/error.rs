use std::fmt;
use std::io;
use std::path::PathBuf;

/// Errors from file formats, corpora and the layers below.
#[derive(Debug)]
pub enum Error {
    Core(ctcnat_core::Error),
    Io { path: PathBuf, source: io::Error },
    /// Malformed checkpoint; `offset` is the byte position of the problem.
    Format { offset: u64, message: String },
    Corpus(String),
    Config(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Self::Io { path: path.into(), source }
    }

    /// Configuration or usage problems, as opposed to runtime failures.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Self::Config(_) | Self::Core(ctcnat_core::Error::Config(_) | ctcnat_core::Error::Options(_))
        )
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Core(e) => e.fmt(f),
            Self::Io { path, .. } => write!(f, "I/O error on {}", path.display()),
            Self::Format { offset, message } => write!(f, "checkpoint format error at byte {offset}: {message}"),
            Self::Corpus(m) => write!(f, "corpus error: {m}"),
            Self::Config(m) => write!(f, "configuration error: {m}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Self::Io { source, .. } => Some(source),
            _ => None,
        }
    }
}

impl From<ctcnat_core::Error> for Error {
    fn from(e: ctcnat_core::Error) -> Self {
        Self::Core(e)
    }
}
