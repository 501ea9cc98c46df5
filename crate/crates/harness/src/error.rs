use std::path::PathBuf;

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),
    #[error("data: {0}")]
    Data(#[from] qrcl_data::DataError),
    #[error("model: {0}")]
    Model(#[from] qrcl_core::Error),
    #[error("training diverged at epoch {epoch} (last good epoch: {})", last_good.map_or("none".to_string(), |e| e.to_string()))]
    Divergence { epoch: usize, last_good: Option<usize> },
    #[error("checkpoint {}: {reason}", path.display())]
    Checkpoint { path: PathBuf, reason: String },
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
}

impl HarnessError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        HarnessError::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit status: 2 configuration, 3 data, 4 numeric divergence.
    pub fn exit_code(&self) -> i32 {
        use qrcl_core::Error as E;
        match self {
            HarnessError::Config(_) => 2,
            HarnessError::Model(E::Config(_) | E::Shape { .. } | E::InvalidShape { .. } | E::SequenceTooShort { .. }) => 2,
            HarnessError::Data(_) | HarnessError::Checkpoint { .. } => 3,
            HarnessError::Divergence { .. } => 4,
            HarnessError::Model(_) | HarnessError::Io { .. } => 1,
        }
    }
}
