use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Param(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("input too short: need more than {needed} samples, got {got}")]
    TooShort { needed: usize, got: usize },

    #[error("numeric divergence: {0}")]
    Divergence(String),

    #[error("design space has {size:.3e} points, above the enumeration limit of {limit}")]
    SpaceTooLarge { size: f64, limit: usize },

    #[error("no feasible design in the search space")]
    NoFeasibleDesign,

    #[error("malformed file {path}: {reason}")]
    Format { path: String, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn format(path: impl AsRef<std::path::Path>, reason: impl ToString) -> Self {
        Error::Format { path: path.as_ref().display().to_string(), reason: reason.to_string() }
    }
}
