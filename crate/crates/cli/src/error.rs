use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    Config(Vec<String>),

    #[error("missing {stage} output {path}; run `ecg-cosearch {stage}` with the same config first")]
    MissingArtifact { stage: &'static str, path: PathBuf },

    #[error("run directory is locked by {0}; remove it if no other command is running")]
    Locked(PathBuf),

    #[error(transparent)]
    Core(#[from] ecg_cosearch::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("{0}")]
    Other(String),
}

impl CliError {
    /// Process exit status: 2 config, 3 missing artifact, 4 divergence, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::MissingArtifact { .. } => 3,
            CliError::Core(ecg_cosearch::Error::Divergence(_)) => 4,
            _ => 1,
        }
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Other(format!("csv: {e}"))
    }
}
