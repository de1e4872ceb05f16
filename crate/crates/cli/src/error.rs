use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Core(#[from] monet::Error),
}

impl CliError {
    pub fn io(path: impl AsRef<Path>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.as_ref().to_path_buf(),
            source,
        }
    }

    /// 2 usage or I/O, 3 data or contract violation, 4 numerical failure.
    pub fn exit_code(&self) -> i32 {
        use monet::Error as E;
        match self {
            CliError::Usage(_) | CliError::Io { .. } => 2,
            CliError::Core(e) => match e {
                E::Io { .. } | E::Config(_) => 2,
                E::Numerical(_) => 4,
                E::Shape(_) | E::InvalidInput(_) | E::PoseInCollision { .. } | E::MissingClasses(_) | E::Json { .. } => 3,
            },
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
