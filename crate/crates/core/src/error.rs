use alloc::string::String;
use alloc::vec::Vec;

use crate::graph::Triple;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("triple {triple} in {split} references unknown {kind} id {id}")]
    DanglingId {
        split: &'static str,
        triple: Triple,
        kind: &'static str,
        id: usize,
    },

    #[error("relation id {relation} is already in the inverse range (base relation count {base})")]
    InverseRelation { relation: usize, base: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("backward requires a scalar root, got shape [{0}, {1}]")]
    NonScalarRoot(usize, usize),

    #[error("feature vector has norm {0}, expected unit norm")]
    NotUnitNorm(f64),

    #[error("gold entity {0} is in the filter set")]
    GoldFiltered(usize),

    #[error("cannot aggregate an empty rank list")]
    EmptyRanks,

    #[error("temperature must be positive, got {0}")]
    Temperature(f64),

    #[error("sequence of length {len} exceeds max_len {max_len}")]
    SequenceTooLong { len: usize, max_len: usize },

    #[error("non-finite loss in batch with triple indices {0:?}")]
    NonFiniteLoss(Vec<usize>),
}

pub type Result<T, E = Error> = core::result::Result<T, E>;
