//! Hyper-relational knowledge graph completion with a masked-statement
//! Transformer.
//!
//! Entity and relation tables are processed with layer normalization and
//! dropout (no graph convolution), each statement is flattened with one
//! masked entity, encoded by a Transformer, and the masked position is scored
//! against every entity. Training mixes main-triplet queries with
//! qualifier-entity queries; evaluation uses filtered ranking.
//!
//! All numeric code is generic over [`Scalar`]; the aliases below fix the
//! usual precisions.

pub mod bench;
pub mod error;
pub mod evaluation;
pub mod model;
pub mod numerics;
pub mod rng;
pub mod scalar;
pub mod store;
pub mod synthetic;
pub mod training;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor32 = numerics::Tensor<f32>;
pub type Tensor64 = numerics::Tensor<f64>;
pub type HyTransformer32 = model::HyTransformer<f32>;
pub type HyTransformer64 = model::HyTransformer<f64>;
