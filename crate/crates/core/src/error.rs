use thiserror::Error;

#[derive(Debug, Error)]
pub enum ChiError {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("step called after the episode finished")]
    EpisodeFinished,

    #[error("ensemble member {index} out of range (ensemble has {len})")]
    MemberOutOfRange { index: usize, len: usize },

    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),

    #[error("malformed metrics file: {0}")]
    Metrics(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = ChiError> = std::result::Result<T, E>;

pub(crate) fn check_dim(context: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(ChiError::DimensionMismatch {
            context,
            expected,
            got,
        })
    }
}
