//! The network: embedding processing, statement flattening, Transformer
//! encoder and masked-position scoring.

mod config;
mod embedding;
mod network;
mod score;
mod sequence;

pub use config::ModelConfig;
pub use embedding::{process_embeddings, EmbeddingTables, ProcessedTables};
pub use network::{EncodedBatch, HyTransformer, ModelLoss, Network, ParamInfo, Params};
pub use score::{entity_logits, score, ScoreVector};
pub use sequence::{flatten, mask_position, Token, TokenSequence};
