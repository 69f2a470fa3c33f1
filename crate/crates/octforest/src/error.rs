use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum Error {
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("invalid connectivity: {}", .0.join("; "))]
    Connectivity(Vec<String>),
    #[error("rank {0} owns no leaves")]
    EmptyRank(usize),
    #[error("forest is not 2:1 balanced near {0}")]
    Unbalanced(String),
    #[error("deadlock: ranks {blocked:?} cannot make progress")]
    Deadlock { blocked: Vec<usize> },
    #[error("collective mismatch on rank {rank}: expected {expected}, found {found}")]
    CollectiveMismatch {
        rank: usize,
        expected: String,
        found: String,
    },
    #[error("rank {0} panicked")]
    RankPanic(usize),
    #[error("malformed message: {0}")]
    Decode(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn contract(msg: impl Into<String>) -> Error {
    Error::Contract(msg.into())
}
