use thiserror::Error;

/// Construction and validation failures for model/data inputs.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("{what}: {details}")]
    InvalidValue { what: &'static str, details: String },
    #[error("joint state space has {states} states, cap is {cap}")]
    StateSpaceTooLarge { states: u128, cap: usize },
    #[error("lookahead method requires a precomputed lookahead context")]
    MissingLookaheadContext,
    #[error("i/o failure: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

/// A proposal had zero mass for some individual: the particle cannot be
/// extended consistently with the data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("proposal mass is zero for individual {individual}")]
pub struct DegenerateProposal {
    pub individual: usize,
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
