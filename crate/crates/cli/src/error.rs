use std::fmt;
use std::path::{Path, PathBuf};

/// Failure of one command, carrying its process exit code.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Core(tscc::Error),
    Io { path: PathBuf, source: std::io::Error },
}

impl CliError {
    pub fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }

    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// 1 usage, 2 validation, 3 numerical failure, 4 I/O.
    pub fn exit_code(&self) -> i32 {
        use tscc::Error as E;
        match self {
            CliError::Usage(_) => 1,
            CliError::Io { .. } => 4,
            CliError::Core(e) => match e {
                E::Io(_) => 4,
                E::Numerical(_) | E::IsolatedPoints(_) | E::ZeroRows(_) => 3,
                _ => 2,
            },
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Io { path, source } => write!(f, "{}: {source}", path.display()),
        }
    }
}

impl std::error::Error for CliError {}

impl From<tscc::Error> for CliError {
    fn from(e: tscc::Error) -> Self {
        CliError::Core(e)
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
