use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Network shape and regularization switches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Entity/relation embedding width.
    pub d_embed: usize,
    /// Encoder width.
    pub d_hidden: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    /// Maximum flattened statement length T.
    pub max_len: usize,
    /// Encoder feed-forward inner width, as a multiple of `d_hidden`.
    pub ffn_mult: usize,
    /// Dropout on encoder sublayer outputs.
    pub attn_dropout: f64,
    /// Dropout inside the scoring feed-forward map.
    pub head_dropout: f64,
    /// Dropout on the processed entity table.
    pub ent_emb_dropout: f64,
    pub use_entity_ln: bool,
    pub use_entity_dropout: bool,
    pub use_relation_ln: bool,
    /// Learned absolute position embeddings; off makes the encoder
    /// permutation-equivariant.
    pub use_positions: bool,
    pub ln_eps: f64,
    pub init_std: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_embed: 200,
            d_hidden: 512,
            n_layers: 2,
            n_heads: 4,
            max_len: 15,
            ffn_mult: 2,
            attn_dropout: 0.1,
            head_dropout: 0.1,
            ent_emb_dropout: 0.3,
            use_entity_ln: true,
            use_entity_dropout: true,
            use_relation_ln: true,
            use_positions: true,
            ln_eps: crate::numerics::LN_EPS,
            init_std: 0.02,
        }
    }
}

impl ModelConfig {
    /// Turns off all three embedding transforms: the plain Transformer path.
    pub fn without_embedding_processing(mut self) -> Self {
        self.use_entity_ln = false;
        self.use_entity_dropout = false;
        self.use_relation_ln = false;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.d_embed == 0 || self.d_hidden == 0 || self.ffn_mult == 0 {
            return fail("widths must be positive".into());
        }
        if self.n_heads == 0 || self.d_hidden % self.n_heads != 0 {
            return fail(format!(
                "d_hidden {} is not divisible by n_heads {}",
                self.d_hidden, self.n_heads
            ));
        }
        if self.max_len < 3 {
            return fail(format!(
                "max_len {} is shorter than a triplet",
                self.max_len
            ));
        }
        for (name, rate) in [
            ("attn_dropout", self.attn_dropout),
            ("head_dropout", self.head_dropout),
            ("ent_emb_dropout", self.ent_emb_dropout),
        ] {
            if !(0.0..1.0).contains(&rate) {
                return fail(format!("{name} = {rate} is outside [0, 1)"));
            }
        }
        if self.ln_eps <= 0.0 {
            return fail("ln_eps must be positive".into());
        }
        Ok(())
    }
}
