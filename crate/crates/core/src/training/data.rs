use rand::seq::SliceRandom;
use rand::Rng;

use super::config::TrainConfig;
use crate::error::{Error, Result};
use crate::model::{flatten, TokenSequence};
use crate::rng::StreamRng;
use crate::scalar::Scalar;
use crate::store::{
    build_label_index, build_queries, CompletionQuery, KnowledgeGraph, Slot, Split, Statement,
};

/// Training queries; each query's `filter_answers` are its training-split
/// positives.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    pub queries: Vec<CompletionQuery>,
}

impl TrainingSet {
    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }

    pub fn n_aux(&self) -> usize {
        self.queries.iter().filter(|q| !q.slot.is_main()).count()
    }

    pub fn n_main(&self) -> usize {
        self.len() - self.n_aux()
    }
}

/// Head and tail queries for every training statement, plus one query per
/// qualifier pair when the auxiliary task is on.
pub fn build_training_set(graph: &KnowledgeGraph, cfg: &TrainConfig) -> Result<TrainingSet> {
    if graph.split_len(Split::Train) == 0 {
        return Err(Error::EmptySplit(Split::Train.as_str().into()));
    }
    let index = build_label_index(graph);
    Ok(TrainingSet {
        queries: build_queries(graph, &index, Split::Train, cfg.use_aux_task),
    })
}

/// `y(1−ε) + ε/N` element-wise.
pub fn smoothed_targets<F: Scalar>(labels: &[F], eps: f64, n_entities: usize) -> Vec<F> {
    let keep = F::of(1.0 - eps);
    let floor = F::of(eps / n_entities as f64);
    labels.iter().map(|&y| y * keep + floor).collect()
}

/// Mean binary cross-entropy of probabilities against smoothed 0/1 labels.
///
/// Probabilities are clamped to `[1e-7, 1 − 1e-7]` before the logarithm.
pub fn smoothed_bce_loss<F: Scalar>(
    probs: &[F],
    labels: &[F],
    eps: f64,
    n_entities: usize,
) -> Result<F> {
    if probs.len() != labels.len() || n_entities == 0 || probs.len() % n_entities != 0 {
        return Err(Error::Shape(format!(
            "{} probabilities and {} labels do not form rows of {n_entities}",
            probs.len(),
            labels.len()
        )));
    }
    let lo = 1e-7;
    let total: f64 = probs
        .iter()
        .zip(smoothed_targets(labels, eps, n_entities))
        .map(|(&p, y)| {
            let p = p.as_f64().clamp(lo, 1.0 - lo);
            let y = y.as_f64();
            -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
        })
        .sum();
    Ok(F::of(total / probs.len().max(1) as f64))
}

/// Reorders the qualifier pairs of `statement` and follows the masked slot.
pub fn permute_qualifiers(
    statement: &Statement,
    slot: Slot,
    rng: &mut impl Rng,
) -> (Statement, Slot) {
    let mut order: Vec<usize> = (0..statement.qualifiers.len()).collect();
    order.shuffle(rng);
    let mut out = statement.clone();
    out.qualifiers = order.iter().map(|&i| statement.qualifiers[i]).collect();
    let slot = match slot {
        Slot::QualifierEntity(i) => {
            Slot::QualifierEntity(order.iter().position(|&o| o == i).expect("index in range"))
        }
        other => other,
    };
    (out, slot)
}

/// Flattened sequences and smoothed 1-N targets for a batch.
pub(crate) fn assemble<F: Scalar>(
    queries: &[&CompletionQuery],
    cfg: &TrainConfig,
    max_len: usize,
    n_entities: usize,
    permute: Option<&mut StreamRng>,
) -> Result<(Vec<TokenSequence>, Vec<F>)> {
    let mut seqs = Vec::with_capacity(queries.len());
    match permute {
        Some(rng) => {
            for q in queries {
                let (s, slot) = permute_qualifiers(&q.source, q.slot, rng);
                seqs.push(flatten(&s, slot, max_len)?);
            }
        }
        None => {
            for q in queries {
                seqs.push(flatten(&q.source, q.slot, max_len)?);
            }
        }
    }
    let mut labels = vec![F::zero(); queries.len() * n_entities];
    for (row, q) in labels.chunks_mut(n_entities).zip(queries) {
        for &j in q.filter_answers.iter() {
            row[j] = F::one();
        }
        row[q.gold] = F::one();
    }
    Ok((
        seqs,
        smoothed_targets(&labels, cfg.label_smoothing, n_entities),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};
    use crate::store::Vocabulary;

    fn graph(z: usize, pairs_every: usize) -> KnowledgeGraph {
        let mut g =
            KnowledgeGraph::new(Vocabulary::numbered("e", 20), Vocabulary::numbered("r", 3));
        for i in 0..z {
            let mut s = Statement::triple(i % 20, i % 3, (i * 7 + 1) % 20);
            if i % pairs_every == 0 {
                s = s.with_qualifiers([(1, (i + 3) % 20)]);
            }
            g.push(s, Split::Train).unwrap();
        }
        g
    }

    #[test]
    fn query_counts() {
        let g = graph(100, 5);
        assert_eq!(g.qualifier_pairs(Split::Train), 20);
        let on = build_training_set(&g, &TrainConfig::default()).unwrap();
        assert_eq!(on.len(), 220);
        assert_eq!(on.n_aux(), 20);
        let off = build_training_set(
            &g,
            &TrainConfig {
                use_aux_task: false,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(off.len(), 200);
    }

    #[test]
    fn every_statement_qualified_adds_at_least_z() {
        let g = graph(30, 1);
        let set = build_training_set(&g, &TrainConfig::default()).unwrap();
        assert!(set.n_aux() >= 30);
    }

    #[test]
    fn smoothing_values() {
        let t = smoothed_targets(&[1.0f64, 0.0], 0.1, 5);
        assert!((t[0] - 0.92).abs() < 1e-12);
        assert!((t[1] - 0.02).abs() < 1e-12);
    }

    #[test]
    fn loss_zero_when_exact() {
        let labels = [1.0f64, 0.0, 0.0, 1.0];
        let l = smoothed_bce_loss(&labels, &labels, 0.0, 2).unwrap();
        assert!(l < 1e-6);
        let l = smoothed_bce_loss(&[0.5f64; 4], &labels, 0.0, 2).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn permutation_tracks_slot() {
        let s = Statement::triple(0, 0, 1).with_qualifiers([(0, 5), (1, 6), (2, 7)]);
        for k in 0..10 {
            let mut rng = stream(k, Stream::Permute { step: 0 });
            let (p, slot) = permute_qualifiers(&s, Slot::QualifierEntity(1), &mut rng);
            assert_eq!(slot.entity_in(&p), 6);
        }
    }

    #[test]
    fn assembled_targets() {
        let g = graph(10, 2);
        let set = build_training_set(&g, &TrainConfig::default()).unwrap();
        let qs: Vec<_> = set.queries.iter().take(3).collect();
        let (seqs, targets) = assemble::<f32>(&qs, &TrainConfig::default(), 5, 20, None).unwrap();
        assert_eq!(seqs.len(), 3);
        assert_eq!(targets.len(), 60);
        let hi = 0.9f32 + 0.1 / 20.0;
        assert!((targets[qs[0].gold] - hi).abs() < 1e-6);
    }
}
