use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::rank::{filtered_rank, TiePolicy};
use super::report::RankReport;
use crate::error::{Error, Result};
use crate::model::{flatten, HyTransformer, ProcessedTables};
use crate::numerics::Checkpoint;
use crate::scalar::Scalar;
use crate::store::{
    build_filter_index, build_queries, AnswerIndex, CompletionQuery, KnowledgeGraph, Split,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalOptions {
    pub tie_policy: TiePolicy,
    /// Also rank qualifier-entity queries (reported separately).
    pub include_aux: bool,
    /// Queries per forward pass.
    pub batch_size: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            tie_policy: TiePolicy::Mean,
            include_aux: false,
            batch_size: 256,
        }
    }
}

/// Filtered rank of every query, in query order.
///
/// Chunks run in parallel; each chunk's result depends only on its own
/// queries, so the output is independent of scheduling.
pub fn rank_queries<F: Scalar>(
    model: &HyTransformer<F>,
    tables: &ProcessedTables<F>,
    queries: &[CompletionQuery],
    policy: TiePolicy,
    batch_size: usize,
) -> Result<Vec<f64>> {
    let t = model.config().max_len;
    let n = model.n_entities();
    let chunks: Vec<Vec<f64>> = queries
        .par_chunks(batch_size.max(1))
        .map(|chunk| {
            let seqs = chunk
                .iter()
                .map(|q| flatten(&q.source, q.slot, t))
                .collect::<Result<Vec<_>>>()?;
            let logits = model.predict_logits(&seqs, tables)?;
            Ok(chunk
                .iter()
                .enumerate()
                .map(|(i, q)| {
                    filtered_rank(
                        &logits.data()[i * n..(i + 1) * n],
                        q.gold,
                        &q.filter_answers,
                        policy,
                    )
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    Ok(chunks.concat())
}

pub fn check_model_matches<F: Scalar>(
    model: &HyTransformer<F>,
    graph: &KnowledgeGraph,
) -> Result<()> {
    if model.n_entities() != graph.n_entities() || model.n_relations() != graph.n_relations() {
        return Err(Error::VocabularyMismatch(format!(
            "model has {} entities and {} relations, dataset has {} and {}",
            model.n_entities(),
            model.n_relations(),
            graph.n_entities(),
            graph.n_relations()
        )));
    }
    Ok(())
}

/// Fails if the checkpoint records a vocabulary fingerprint that differs
/// from the graph's.
pub fn check_checkpoint_vocabulary<F: Scalar>(
    ckpt: &Checkpoint<F>,
    graph: &KnowledgeGraph,
) -> Result<()> {
    let recorded = ckpt
        .meta
        .get("extra")
        .and_then(|e| e.get("vocabulary"))
        .and_then(|v| v.as_str());
    match recorded {
        Some(fp) if fp != graph.vocabulary_fingerprint() => Err(Error::VocabularyMismatch(
            "checkpoint was trained on a different entity/relation vocabulary".into(),
        )),
        _ => Ok(()),
    }
}

/// Filtered evaluation of `split` against a prebuilt answer index.
pub fn evaluate_with_index<F: Scalar>(
    model: &HyTransformer<F>,
    graph: &KnowledgeGraph,
    index: &AnswerIndex,
    split: Split,
    opts: &EvalOptions,
) -> Result<RankReport> {
    check_model_matches(model, graph)?;
    if graph.split_len(split) == 0 {
        return Err(Error::EmptySplit(split.as_str().into()));
    }
    let queries = build_queries(graph, index, split, opts.include_aux);
    let tables = model.processed_tables()?;
    let ranks = rank_queries(model, &tables, &queries, opts.tie_policy, opts.batch_size)?;
    Ok(RankReport::from_ranks(
        split.as_str(),
        opts.tie_policy,
        &queries,
        &ranks,
    ))
}

pub fn evaluate<F: Scalar>(
    model: &HyTransformer<F>,
    graph: &KnowledgeGraph,
    split: Split,
    opts: &EvalOptions,
) -> Result<RankReport> {
    evaluate_with_index(model, graph, &build_filter_index(graph), split, opts)
}

pub fn evaluate_checkpoint<F: Scalar>(
    ckpt: &Checkpoint<F>,
    graph: &KnowledgeGraph,
    split: Split,
    opts: &EvalOptions,
) -> Result<RankReport> {
    check_checkpoint_vocabulary(ckpt, graph)?;
    let model = HyTransformer::from_checkpoint(ckpt)?;
    evaluate(&model, graph, split, opts)
}
