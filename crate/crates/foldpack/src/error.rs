use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: line {line}: {msg}", path.display())]
    Parse { path: PathBuf, line: usize, msg: String },
    #[error("{}: byte {offset}: {msg}", path.display())]
    Binary { path: PathBuf, offset: usize, msg: String },
    #[error("{}: {msg}", path.display())]
    Dataset { path: PathBuf, msg: String },
    #[error("config {key}: {msg}")]
    Config { key: String, msg: String },
    #[error("{0}")]
    Usage(String),
    #[error("{}: checkpoint version {found}, expected {expected}", path.display())]
    CheckpointVersion { path: PathBuf, found: u32, expected: u32 },
    #[error("{}: {msg}", path.display())]
    Checkpoint { path: PathBuf, msg: String },
    #[error(transparent)]
    Core(#[from] foldpack_core::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    pub fn config(key: impl Into<String>, msg: impl Into<String>) -> Self {
        Self::Config {
            key: key.into(),
            msg: msg.into(),
        }
    }

    /// 2 for usage and configuration problems, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config { .. } | Self::Usage(_) => 2,
            _ => 1,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
