use std::path::PathBuf;

/// A malformed byte stream: what was wrong and where.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("byte {offset}: {message}")]
pub struct FormatError {
    pub offset: u64,
    pub message: String,
}

impl FormatError {
    pub fn new(offset: u64, message: impl Into<String>) -> Self {
        FormatError {
            offset,
            message: message.into(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}: {source}", path.display())]
    Format { path: PathBuf, source: FormatError },
    #[error("{}: format version {found} is not supported (this build reads version {supported})", path.display())]
    Version { path: PathBuf, found: u32, supported: u32 },
    #[error("missing data: {0}")]
    MissingData(String),
    #[error("{0}")]
    Usage(String),
    /// Inputs that are individually valid but do not fit together, such as a
    /// checkpoint and a dataset of different geometry.
    #[error("dimension mismatch: {0}")]
    Mismatch(String),
    #[error(transparent)]
    Core(#[from] rotunroll_core::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit status: 2 usage, 3 missing data, 4 corrupt or
    /// unsupported file, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) | Error::Mismatch(_) => 2,
            Error::MissingData(_) => 3,
            Error::Format { .. } | Error::Version { .. } => 4,
            Error::Io { .. } | Error::Core(_) => 1,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<PathBuf>, source: FormatError) -> Self {
        Error::Format {
            path: path.into(),
            source,
        }
    }
}

pub(crate) fn read_file(path: &std::path::Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::MissingData(format!("{} not found", path.display()))
        } else {
            Error::io(path, e)
        }
    })
}
