use std::fmt;
use std::sync::Arc;

use num_traits::{One, Zero};

use super::graph::{EntityId, KnowledgeGraph, Split, Statement};
use super::index::{AnswerIndex, PatternKey};

/// Which entity of a statement is masked.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Slot {
    Head,
    Tail,
    /// Entity of the `i`-th qualifier pair (zero-based).
    QualifierEntity(usize),
}

impl Slot {
    /// Head, tail, then every qualifier entity in stored order.
    pub fn all_for(statement: &Statement) -> impl Iterator<Item = Slot> {
        [Slot::Head, Slot::Tail]
            .into_iter()
            .chain((0..statement.qualifiers.len()).map(Slot::QualifierEntity))
    }

    pub fn entity_in(self, statement: &Statement) -> EntityId {
        match self {
            Slot::Head => statement.head,
            Slot::Tail => statement.tail,
            Slot::QualifierEntity(i) => statement.qualifiers[i].entity,
        }
    }

    pub fn is_main(self) -> bool {
        matches!(self, Slot::Head | Slot::Tail)
    }
}

impl fmt::Display for Slot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Slot::Head => f.write_str("head"),
            Slot::Tail => f.write_str("tail"),
            Slot::QualifierEntity(i) => write!(f, "qualifier[{i}]"),
        }
    }
}

/// A statement with exactly one masked entity and the entities known to
/// complete the same pattern.
#[derive(Debug, Clone)]
pub struct CompletionQuery {
    pub source: Statement,
    pub slot: Slot,
    pub gold: EntityId,
    pub filter_answers: Arc<Vec<EntityId>>,
}

impl CompletionQuery {
    pub fn new(source: Statement, slot: Slot, index: &AnswerIndex) -> Self {
        let gold = slot.entity_in(&source);
        let filter_answers = index.shared(&PatternKey::of(&source, slot));
        CompletionQuery {
            source,
            slot,
            gold,
            filter_answers,
        }
    }

    pub fn pattern(&self) -> PatternKey {
        PatternKey::of(&self.source, self.slot)
    }
}

/// Head and tail queries for every statement of `split`, followed (per
/// statement) by one query per qualifier entity when `include_aux` is set.
pub fn build_queries(
    graph: &KnowledgeGraph,
    index: &AnswerIndex,
    split: Split,
    include_aux: bool,
) -> Vec<CompletionQuery> {
    let mut out = Vec::new();
    for statement in graph.split(split) {
        for slot in Slot::all_for(statement) {
            if slot.is_main() || include_aux {
                out.push(CompletionQuery::new(statement.clone(), slot, index));
            }
        }
    }
    out
}

/// Dense 1-N label rows (`queries.len() × n_entities`, row-major).
///
/// Entry `j` of a row is one iff `j` completes the query's pattern in the
/// training split. The gold entity is always a positive.
pub fn one_n_labels<F: Copy + Zero + One>(
    queries: &[CompletionQuery],
    train_index: &AnswerIndex,
    n_entities: usize,
) -> Vec<F> {
    let mut out = vec![F::zero(); queries.len() * n_entities];
    for (row, q) in out.chunks_mut(n_entities).zip(queries) {
        for &j in train_index.answers(&q.pattern()) {
            row[j] = F::one();
        }
        row[q.gold] = F::one();
    }
    out
}
