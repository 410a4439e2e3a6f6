use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub type EntityId = usize;
pub type RelationId = usize;

/// A qualifier pair `(relation, entity)` attached to a main triplet.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Qualifier {
    pub relation: RelationId,
    pub entity: EntityId,
}

/// One hyper-relational fact: a main triplet plus ordered qualifier pairs.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Statement {
    pub head: EntityId,
    pub relation: RelationId,
    pub tail: EntityId,
    pub qualifiers: Vec<Qualifier>,
}

impl Statement {
    pub fn triple(head: EntityId, relation: RelationId, tail: EntityId) -> Self {
        Statement {
            head,
            relation,
            tail,
            qualifiers: Vec::new(),
        }
    }

    pub fn with_qualifiers(
        mut self,
        pairs: impl IntoIterator<Item = (RelationId, EntityId)>,
    ) -> Self {
        self.qualifiers.extend(
            pairs
                .into_iter()
                .map(|(relation, entity)| Qualifier { relation, entity }),
        );
        self
    }

    pub fn n_qualifiers(&self) -> usize {
        self.qualifiers.len()
    }

    /// Number of tokens once flattened: `3 + 2n`.
    pub fn token_len(&self) -> usize {
        3 + 2 * self.qualifiers.len()
    }
}

impl fmt::Display for Statement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {}", self.head, self.relation, self.tail)?;
        for q in &self.qualifiers {
            write!(f, ", ({}, {})", q.relation, q.entity)?;
        }
        write!(f, ")")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Valid, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "valid" | "validation" | "dev" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split '{other}'"))),
        }
    }
}

/// Dense name ↔ id mapping, ids assigned in first-appearance order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Vocabulary {
    names: Vec<String>,
    ids: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn intern(&mut self, name: &str) -> usize {
        if let Some(&id) = self.ids.get(name) {
            return id;
        }
        let id = self.names.len();
        self.names.push(name.to_owned());
        self.ids.insert(name.to_owned(), id);
        id
    }

    pub fn get(&self, name: &str) -> Option<usize> {
        self.ids.get(name).copied()
    }

    pub fn name(&self, id: usize) -> Option<&str> {
        self.names.get(id).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// Vocabulary with numeric names `0..n`, for synthetic graphs.
    pub fn numbered(prefix: &str, n: usize) -> Self {
        let mut v = Vocabulary::new();
        for i in 0..n {
            v.intern(&format!("{prefix}{i}"));
        }
        v
    }

    /// SHA-256 over names in id order; identifies the mapping in checkpoints.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for name in &self.names {
            h.update(name.as_bytes());
            h.update([0u8]);
        }
        hex_digest(&h.finalize())
    }
}

pub(crate) fn hex_digest(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// A hyper-relational knowledge graph with split tags per statement.
///
/// Immutable once built; safe to share across threads.
#[derive(Debug, Clone, Default)]
pub struct KnowledgeGraph {
    pub entities: Vocabulary,
    pub relations: Vocabulary,
    statements: Vec<Statement>,
    splits: Vec<Split>,
}

impl KnowledgeGraph {
    pub fn new(entities: Vocabulary, relations: Vocabulary) -> Self {
        KnowledgeGraph {
            entities,
            relations,
            statements: Vec::new(),
            splits: Vec::new(),
        }
    }

    /// Adds a statement, checking that every id is inside the vocabularies.
    pub fn push(&mut self, statement: Statement, split: Split) -> Result<()> {
        let n = self.entities.len();
        let m = self.relations.len();
        let check_e = |id: usize| {
            if id < n {
                Ok(())
            } else {
                Err(Error::OutOfVocabulary {
                    kind: "entity",
                    id,
                    size: n,
                })
            }
        };
        let check_r = |id: usize| {
            if id < m {
                Ok(())
            } else {
                Err(Error::OutOfVocabulary {
                    kind: "relation",
                    id,
                    size: m,
                })
            }
        };
        check_e(statement.head)?;
        check_e(statement.tail)?;
        check_r(statement.relation)?;
        for q in &statement.qualifiers {
            check_r(q.relation)?;
            check_e(q.entity)?;
        }
        self.statements.push(statement);
        self.splits.push(split);
        Ok(())
    }

    pub fn n_entities(&self) -> usize {
        self.entities.len()
    }

    pub fn n_relations(&self) -> usize {
        self.relations.len()
    }

    /// Total statement count Z over all splits.
    pub fn len(&self) -> usize {
        self.statements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.statements.is_empty()
    }

    pub fn statements(&self) -> &[Statement] {
        &self.statements
    }

    pub fn split_of(&self, idx: usize) -> Split {
        self.splits[idx]
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &Statement, Split)> + '_ {
        self.statements
            .iter()
            .zip(&self.splits)
            .enumerate()
            .map(|(i, (s, &sp))| (i, s, sp))
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &Statement> + '_ {
        self.iter()
            .filter(move |(_, _, s)| *s == split)
            .map(|(_, st, _)| st)
    }

    pub fn split_len(&self, split: Split) -> usize {
        self.splits.iter().filter(|&&s| s == split).count()
    }

    pub fn max_qualifiers(&self) -> usize {
        self.statements
            .iter()
            .map(Statement::n_qualifiers)
            .max()
            .unwrap_or(0)
    }

    /// Shortest sequence length that fits every statement.
    pub fn required_len(&self) -> usize {
        3 + 2 * self.max_qualifiers()
    }

    pub fn qualifier_pairs(&self, split: Split) -> usize {
        self.split(split).map(Statement::n_qualifiers).sum()
    }

    /// Fraction of statements carrying at least one qualifier.
    pub fn qualifier_ratio(&self) -> f64 {
        if self.statements.is_empty() {
            return 0.0;
        }
        let with = self
            .statements
            .iter()
            .filter(|s| !s.qualifiers.is_empty())
            .count();
        with as f64 / self.statements.len() as f64
    }

    pub fn vocabulary_fingerprint(&self) -> String {
        format!(
            "{}:{}",
            self.entities.fingerprint(),
            self.relations.fingerprint()
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vocabulary_first_appearance_order() {
        let mut v = Vocabulary::new();
        assert_eq!(v.intern("b"), 0);
        assert_eq!(v.intern("a"), 1);
        assert_eq!(v.intern("b"), 0);
        assert_eq!(v.names(), &["b".to_string(), "a".to_string()]);
    }

    #[test]
    fn push_rejects_unknown_ids() {
        let mut g = KnowledgeGraph::new(Vocabulary::numbered("e", 2), Vocabulary::numbered("r", 1));
        assert!(g.push(Statement::triple(0, 0, 1), Split::Train).is_ok());
        let err = g
            .push(Statement::triple(0, 1, 1), Split::Train)
            .unwrap_err();
        assert!(matches!(
            err,
            Error::OutOfVocabulary {
                kind: "relation",
                ..
            }
        ));
        let err = g
            .push(
                Statement::triple(0, 0, 1).with_qualifiers([(0, 5)]),
                Split::Train,
            )
            .unwrap_err();
        assert!(matches!(err, Error::OutOfVocabulary { kind: "entity", .. }));
    }

    #[test]
    fn duplicate_qualifiers_preserved() {
        let s = Statement::triple(0, 0, 1).with_qualifiers([(0, 1), (0, 1)]);
        assert_eq!(s.n_qualifiers(), 2);
        assert_eq!(s.token_len(), 7);
    }
}
