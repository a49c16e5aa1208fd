//! Supervised and semi-supervised sparse low-dimensional representations.
//!
//! A dictionary `D` (unit-norm atoms) and a rank-`l` projector `P` are learned
//! jointly so that projected elastic-net codes `PΦ` optimize a trace quotient
//! built from one of nine graph-embedding criteria.

pub mod error;
pub mod graphs;
pub mod linalg;
pub mod manifold;
pub mod objective;
pub mod optimizer;
pub mod pipeline;
pub mod sparse;

pub use error::{Result, SparlowError};
pub use graphs::{GraphSpec, LabelSet, StructurePair, Variant};
pub use manifold::{Dictionary, ProductPoint, Projector, TangentPair};
pub use sparse::{CodeBatch, ElasticNetPrior, SparseCode};
