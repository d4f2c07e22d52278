use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("scene generation failed for seed {seed}: {reason}")]
    Generation { seed: u64, reason: String },

    #[error("cell ({x}, {y}) is unreachable")]
    Unreachable { x: usize, y: usize },

    #[error("invalid cell ({x}, {y}): {reason}")]
    InvalidCell { x: usize, y: usize, reason: &'static str },

    #[error("episode sampling failed: {0}")]
    EpisodeSampling(String),

    #[error("episode already finished")]
    EpisodeFinished,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("{0}")]
    Config(String),

    #[error("non-finite training loss at update {update}: {dump}")]
    NonFiniteLoss { update: u64, dump: String },

    #[error(transparent)]
    Tensor(#[from] avnav_tensor::TensorError),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Stable machine-readable category, used for CLI exit reporting.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Generation { .. } => "generation",
            Error::Unreachable { .. } | Error::InvalidCell { .. } => "invariant",
            Error::EpisodeSampling(_) => "episode_sampling",
            Error::EpisodeFinished => "episode_finished",
            Error::InvalidArgument(_) | Error::EmptyInput(_) => "invalid_argument",
            Error::Parse { .. } => "parse",
            Error::Config(_) => "config",
            Error::NonFiniteLoss { .. } => "non_finite",
            Error::Tensor(_) => "tensor",
            Error::Io(_) => "io",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
