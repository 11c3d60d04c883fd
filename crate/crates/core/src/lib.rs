//! Structure-augmented contrastive knowledge graph completion.
//!
//! Text encoders embed `(head, relation)` queries and candidate tails; a
//! structural embedding table injects learned per-layer key/value prefixes
//! into both encoders and contributes its own contrastive loss. Negatives come
//! from the batch, from a momentum queue of tail features, and from tails that
//! share the query relation.
//!
//! The crate is `no_std` with `alloc`; file formats, checkpoints and the CLI
//! live in the companion `mocosa-cli` crate.

#![no_std]
// Guards such as `!(x >= 0.0)` are meant to reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod autodiff;
pub mod error;
pub mod eval;
pub mod graph;
pub mod loss;
pub mod model;
pub mod negatives;
pub mod optim;
pub mod params;
pub mod structural;
pub mod tensor;
pub mod text;
pub mod tokenizer;
pub mod train;

/// Floor used when dividing by a vector norm.
pub const NORM_EPS: f64 = 1e-12;

pub use error::{Error, Result};
pub use graph::{EntityId, KnowledgeGraph, RelationId, Split, SplitSet, Triple};
pub use model::{Model, ModelConfig, ScoreMode, TextInputs};
pub use structural::AseKind;
pub use tensor::Tensor;
pub use train::{TrainConfig, TrainMode, Trainer};
