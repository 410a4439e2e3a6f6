use crate::numerics::functional::{dot, sigmoid};
use crate::numerics::Tensor;
use crate::scalar::Scalar;

/// Per-entity probabilities for one masked query; never includes the mask
/// entity.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreVector<F> {
    pub probs: Vec<F>,
}

impl<F: Scalar> ScoreVector<F> {
    pub fn from_logits(logits: &[F]) -> Self {
        ScoreVector {
            probs: logits.iter().map(|&z| sigmoid(z)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn argmax(&self) -> Option<usize> {
        self.probs
            .iter()
            .enumerate()
            .fold(None, |best: Option<(usize, F)>, (i, &p)| match best {
                Some((_, bp)) if bp >= p => best,
                _ => Some((i, p)),
            })
            .map(|(i, _)| i)
    }
}

/// Dot products of `query` with the first `n_entities` rows of the
/// processed entity table.
pub fn entity_logits<F: Scalar>(
    query: &[F],
    entity_table: &Tensor<F>,
    n_entities: usize,
) -> Vec<F> {
    (0..n_entities)
        .map(|j| dot(query, entity_table.row(j)))
        .collect()
}

/// `sigmoid(query · Êⱼ)` for every entity `j < N`.
pub fn score<F: Scalar>(
    query: &[F],
    entity_table: &Tensor<F>,
    n_entities: usize,
) -> ScoreVector<F> {
    ScoreVector::from_logits(&entity_logits(query, entity_table, n_entities))
}
