use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum Error {
    #[error("view {0} has no members")]
    DegenerateView(String),
    #[error("empty view sequence")]
    EmptySequence,
    #[error("views are not ordered by containment: {0}")]
    NotAChain(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("scenario error: {0}")]
    Scenario(String),
    #[error("{0} is not a member of {1}")]
    NotMember(String, String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
