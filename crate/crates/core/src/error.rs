use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("unknown node id {0}")]
    UnknownNode(usize),
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("token id {token} outside vocabulary of size {vocab}")]
    OutOfVocabulary { token: u32, vocab: usize },
    #[error("rollout is missing teacher actions")]
    MissingTeacherActions,
    #[error("length mismatch: {0}")]
    LengthMismatch(&'static str),
    #[error("negative loss weight {0}")]
    NegativeWeight(f64),
    #[error("world seed {0} appears in more than one split pool")]
    OverlappingSeeds(u64),
    #[error("matching loss needs a batch of at least 2 episodes")]
    BatchTooSmall,
    #[error("non-finite value in {term} at iteration {iteration}")]
    NonFinite { term: String, iteration: usize },
    #[error("checkpoint has no trained speaker head")]
    MissingSpeaker,
    #[error("parameter layout mismatch: {0}")]
    ParamLayout(String),
}
