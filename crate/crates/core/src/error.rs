use thiserror::Error;

/// Errors raised by tree construction, expansion operators, evaluation and transport.
#[derive(Debug, Error)]
pub enum FmmError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("rank count {ranks} is incompatible with the {scheme} partition")]
    IncompatibleRankCount { ranks: usize, scheme: &'static str },

    #[error("coincident points with ids {first} and {second}")]
    CoincidentPoints { first: u64, second: u64 },

    #[error("zero translation vector in multipole-to-local shift")]
    ZeroTranslation,

    #[error("unknown rank {rank} (run has {size} ranks)")]
    UnknownRank { rank: usize, size: usize },

    #[error("configuration mismatch between rank {local} and rank {remote}")]
    ConfigMismatch { local: usize, remote: usize },

    #[error("transport watchdog expired after {seconds:.1} s waiting on {what}")]
    Watchdog { seconds: f64, what: String },

    #[error("transport failure: {0}")]
    Transport(String),

    #[error("protocol violation: {0}")]
    Protocol(String),

    #[error("malformed payload: {0}")]
    Decode(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, FmmError>;
