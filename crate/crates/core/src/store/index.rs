//! Query patterns and the answer index used for filtered ranking and 1-N labels.

use std::collections::HashMap;
use std::sync::Arc;

use super::graph::{EntityId, KnowledgeGraph, RelationId, Split, Statement};
use super::query::Slot;

/// A statement with one entity slot wildcarded.
///
/// Qualifiers are kept as a sorted multiset so that pair order does not
/// distinguish patterns.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PatternKey {
    pub head: Option<EntityId>,
    pub relation: RelationId,
    pub tail: Option<EntityId>,
    pub qualifiers: Vec<(RelationId, Option<EntityId>)>,
}

impl PatternKey {
    /// Pattern of `statement` with `slot` wildcarded.
    ///
    /// Panics if `slot` names a qualifier the statement does not have.
    pub fn of(statement: &Statement, slot: Slot) -> Self {
        let mut qualifiers: Vec<_> = statement
            .qualifiers
            .iter()
            .enumerate()
            .map(|(i, q)| {
                let entity = if slot == Slot::QualifierEntity(i) {
                    None
                } else {
                    Some(q.entity)
                };
                (q.relation, entity)
            })
            .collect();
        if let Slot::QualifierEntity(i) = slot {
            assert!(
                i < statement.qualifiers.len(),
                "qualifier slot {i} out of range"
            );
        }
        qualifiers.sort_unstable();
        PatternKey {
            head: (slot != Slot::Head).then_some(statement.head),
            relation: statement.relation,
            tail: (slot != Slot::Tail).then_some(statement.tail),
            qualifiers,
        }
    }
}

/// Maps each query pattern to the sorted, deduplicated set of entities that
/// complete it in the indexed splits.
#[derive(Debug, Clone, Default)]
pub struct AnswerIndex {
    map: HashMap<PatternKey, Arc<Vec<EntityId>>>,
}

impl AnswerIndex {
    pub fn build(graph: &KnowledgeGraph, splits: &[Split]) -> Self {
        let mut raw: HashMap<PatternKey, Vec<EntityId>> = HashMap::new();
        for (_, statement, split) in graph.iter() {
            if !splits.contains(&split) {
                continue;
            }
            for slot in Slot::all_for(statement) {
                raw.entry(PatternKey::of(statement, slot))
                    .or_default()
                    .push(slot.entity_in(statement));
            }
        }
        let map = raw
            .into_iter()
            .map(|(k, mut v)| {
                v.sort_unstable();
                v.dedup();
                (k, Arc::new(v))
            })
            .collect();
        AnswerIndex { map }
    }

    /// Answers for `key`; empty when the pattern never occurs.
    pub fn answers(&self, key: &PatternKey) -> &[EntityId] {
        self.map.get(key).map(|v| v.as_slice()).unwrap_or(&[])
    }

    pub fn shared(&self, key: &PatternKey) -> Arc<Vec<EntityId>> {
        self.map.get(key).cloned().unwrap_or_default()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

/// Filter index over train ∪ valid ∪ test.
pub fn build_filter_index(graph: &KnowledgeGraph) -> AnswerIndex {
    AnswerIndex::build(graph, &Split::ALL)
}

/// Training-split index; its answer sets are the 1-N positives.
pub fn build_label_index(graph: &KnowledgeGraph) -> AnswerIndex {
    AnswerIndex::build(graph, &[Split::Train])
}
