use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, HarnessError>;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Core(#[from] softmix::Error),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("render: {0}")]
    Render(String),
}

impl HarnessError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        HarnessError::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit status: 2 config, 3 divergence, 4 oracle budget, 5 I/O, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 2,
            HarnessError::Core(e) if e.is_divergence() => 3,
            HarnessError::Core(softmix::Error::OracleBudget { .. }) => 4,
            HarnessError::Core(
                softmix::Error::Config(_) | softmix::Error::Vocabulary(_) | softmix::Error::Schedule { .. },
            ) => 2,
            HarnessError::Io { .. } => 5,
            _ => 1,
        }
    }
}
