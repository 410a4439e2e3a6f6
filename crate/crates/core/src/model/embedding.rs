//! Layer-norm + dropout processing of the entity and relation tables.
//!
//! Cost is `O(N·d + M·d)` per call and independent of the number of
//! statements.

use rand::Rng;

use super::config::ModelConfig;
use crate::error::Result;
use crate::numerics::{dropout, layer_norm, Mode, Tensor};
use crate::scalar::Scalar;

/// Raw entity table (`(N+1)×d`, last row is the mask entity), relation
/// table (`M×d`) and the layer-norm affine parameters for each.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTables<F> {
    pub entity: Tensor<F>,
    pub relation: Tensor<F>,
    pub entity_gain: Tensor<F>,
    pub entity_bias: Tensor<F>,
    pub relation_gain: Tensor<F>,
    pub relation_bias: Tensor<F>,
}

impl<F: Scalar> EmbeddingTables<F> {
    /// Normal(0, std²) tables with identity layer-norm affine.
    pub fn random(
        n_entities: usize,
        n_relations: usize,
        d: usize,
        std: f64,
        rng: &mut impl Rng,
    ) -> Self {
        EmbeddingTables {
            entity: Tensor::randn(&[n_entities + 1, d], std, rng),
            relation: Tensor::randn(&[n_relations, d], std, rng),
            entity_gain: Tensor::ones(&[d]),
            entity_bias: Tensor::zeros(&[d]),
            relation_gain: Tensor::ones(&[d]),
            relation_bias: Tensor::zeros(&[d]),
        }
    }

    pub fn n_entities(&self) -> usize {
        self.entity.rows().saturating_sub(1)
    }
}

/// Processed tables `Ê` (with mask row) and `R̂`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProcessedTables<F> {
    pub entity: Tensor<F>,
    pub relation: Tensor<F>,
}

/// `Ê = Dropout(LN(E))`, `R̂ = LN(R)`, each transform switchable.
pub fn process_embeddings<F: Scalar>(
    tables: &EmbeddingTables<F>,
    cfg: &ModelConfig,
    mode: Mode,
    rng: &mut impl Rng,
) -> Result<ProcessedTables<F>> {
    let eps = F::of(cfg.ln_eps);
    let mut entity = if cfg.use_entity_ln {
        layer_norm(
            &tables.entity,
            &tables.entity_gain,
            &tables.entity_bias,
            eps,
        )?
    } else {
        tables.entity.clone()
    };
    if cfg.use_entity_dropout {
        entity = dropout(&entity, cfg.ent_emb_dropout, mode, rng)?;
    }
    let relation = if cfg.use_relation_ln {
        layer_norm(
            &tables.relation,
            &tables.relation_gain,
            &tables.relation_bias,
            eps,
        )?
    } else {
        tables.relation.clone()
    };
    Ok(ProcessedTables { entity, relation })
}
