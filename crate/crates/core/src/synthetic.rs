//! Seeded synthetic hyper-relational graphs for tests, benchmarks and
//! small-scale experiments.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;

use crate::rng::{stream, Stream};
use crate::store::{KnowledgeGraph, Split, Statement, Vocabulary};

/// Uniformly random statements, all in the training split.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomGraph {
    pub n_entities: usize,
    pub n_relations: usize,
    pub n_statements: usize,
    /// Fraction of statements that carry qualifiers.
    pub qualified_fraction: f64,
    /// Qualified statements get between 1 and this many pairs.
    pub max_qualifiers: usize,
    pub seed: u64,
}

impl Default for RandomGraph {
    fn default() -> Self {
        RandomGraph {
            n_entities: 50,
            n_relations: 5,
            n_statements: 200,
            qualified_fraction: 0.5,
            max_qualifiers: 2,
            seed: 0,
        }
    }
}

impl RandomGraph {
    pub fn build(&self) -> KnowledgeGraph {
        let mut rng = stream(self.seed, Stream::Data);
        let mut g = KnowledgeGraph::new(
            Vocabulary::numbered("e", self.n_entities),
            Vocabulary::numbered("r", self.n_relations),
        );
        let n_qualified = (self.qualified_fraction * self.n_statements as f64).round() as usize;
        let mut qualified: Vec<bool> = (0..self.n_statements).map(|i| i < n_qualified).collect();
        qualified.shuffle(&mut rng);
        for q in qualified {
            let (n, m) = (self.n_entities, self.n_relations);
            let mut s = Statement::triple(
                rng.random_range(0..n),
                rng.random_range(0..m),
                rng.random_range(0..n),
            );
            if q && self.max_qualifiers > 0 {
                let k = rng.random_range(1..=self.max_qualifiers);
                s = s.with_qualifiers(
                    (0..k).map(|_| (rng.random_range(0..m), rng.random_range(0..n))),
                );
            }
            g.push(s, Split::Train).expect("ids drawn in range");
        }
        g
    }
}

/// Statements `(h, r, t, {(q_f, g(h, r)), (q_c, c)})` where `g` is a fixed
/// random function and `c` is a random context entity.
///
/// Each base triplet recurs with several contexts; statements are split at
/// random, so validation triplets were seen in training with other
/// contexts and validation qualifier entities are predictable from
/// `(h, r)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FunctionalQualifierGraph {
    pub n_entities: usize,
    /// Relations used for main triplets; two more are added as qualifier
    /// relations.
    pub n_main_relations: usize,
    pub n_triplets: usize,
    pub contexts_per_triplet: usize,
    pub valid_fraction: f64,
    pub seed: u64,
}

impl Default for FunctionalQualifierGraph {
    fn default() -> Self {
        FunctionalQualifierGraph {
            n_entities: 60,
            n_main_relations: 4,
            n_triplets: 120,
            contexts_per_triplet: 3,
            valid_fraction: 0.2,
            seed: 0,
        }
    }
}

impl FunctionalQualifierGraph {
    pub fn functional_relation(&self) -> usize {
        self.n_main_relations
    }

    pub fn context_relation(&self) -> usize {
        self.n_main_relations + 1
    }

    /// The qualifier entity determined by `(head, relation)`.
    pub fn qualifier_of(&self, head: usize, relation: usize) -> usize {
        self.table()[head * self.n_main_relations + relation]
    }

    fn table(&self) -> Vec<usize> {
        let mut rng = stream(self.seed ^ 0x9e37_79b9, Stream::Data);
        (0..self.n_entities * self.n_main_relations)
            .map(|_| rng.random_range(0..self.n_entities))
            .collect()
    }

    pub fn build(&self) -> KnowledgeGraph {
        let (n, m) = (self.n_entities, self.n_main_relations);
        let table = self.table();
        let mut rng = stream(self.seed, Stream::Data);
        let mut seen = std::collections::HashSet::new();
        let mut triplets = Vec::with_capacity(self.n_triplets);
        while triplets.len() < self.n_triplets {
            let t = (
                rng.random_range(0..n),
                rng.random_range(0..m),
                rng.random_range(0..n),
            );
            if seen.insert(t) {
                triplets.push(t);
            }
        }
        let mut statements = Vec::new();
        for &(h, r, t) in &triplets {
            let mut contexts: Vec<usize> = (0..n).collect();
            contexts.shuffle(&mut rng);
            for &c in contexts.iter().take(self.contexts_per_triplet) {
                statements.push(Statement::triple(h, r, t).with_qualifiers([
                    (self.functional_relation(), table[h * m + r]),
                    (self.context_relation(), c),
                ]));
            }
        }
        statements.shuffle(&mut rng);
        let n_valid = (self.valid_fraction * statements.len() as f64).round() as usize;
        let mut g = KnowledgeGraph::new(
            Vocabulary::numbered("e", n),
            Vocabulary::numbered("r", m + 2),
        );
        for (i, s) in statements.into_iter().enumerate() {
            let split = if i < n_valid {
                Split::Valid
            } else {
                Split::Train
            };
            g.push(s, split).expect("ids drawn in range");
        }
        g
    }
}

/// Entities fall into clusters and every relation maps clusters to clusters
/// through a fixed permutation; the tail is drawn uniformly from the target
/// cluster of the head's cluster.
///
/// Held-out statements are only predictable up to cluster membership, so
/// validation scores reward embeddings that generalize across cluster
/// members over ones that memorize training tails. Qualified statements
/// carry one pair whose entity comes from a cluster fixed by the qualifier
/// relation and the tail's cluster.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusteredGraph {
    pub n_entities: usize,
    pub n_clusters: usize,
    pub n_main_relations: usize,
    pub n_qualifier_relations: usize,
    pub n_statements: usize,
    pub qualified_fraction: f64,
    pub valid_fraction: f64,
    pub seed: u64,
}

impl Default for ClusteredGraph {
    fn default() -> Self {
        ClusteredGraph {
            n_entities: 100,
            n_clusters: 10,
            n_main_relations: 4,
            n_qualifier_relations: 2,
            n_statements: 600,
            qualified_fraction: 0.5,
            valid_fraction: 0.2,
            seed: 0,
        }
    }
}

impl ClusteredGraph {
    pub fn cluster_of(&self, entity: usize) -> usize {
        entity % self.n_clusters
    }

    pub fn build(&self) -> KnowledgeGraph {
        let (n, k) = (self.n_entities, self.n_clusters.max(1));
        let mut rng = stream(self.seed, Stream::Data);
        let n_rel = self.n_main_relations + self.n_qualifier_relations;
        let maps: Vec<Vec<usize>> = (0..n_rel)
            .map(|_| {
                let mut p: Vec<usize> = (0..k).collect();
                p.shuffle(&mut rng);
                p
            })
            .collect();
        let members: Vec<Vec<usize>> = (0..k).map(|c| (c..n).step_by(k).collect()).collect();
        let mut seen = std::collections::HashSet::new();
        let mut statements = Vec::with_capacity(self.n_statements);
        let mut attempts = 0;
        while statements.len() < self.n_statements && attempts < 100 * self.n_statements {
            attempts += 1;
            let h = rng.random_range(0..n);
            let r = rng.random_range(0..self.n_main_relations);
            let t = *members[maps[r][self.cluster_of(h)]]
                .choose(&mut rng)
                .expect("non-empty cluster");
            let mut s = Statement::triple(h, r, t);
            if self.n_qualifier_relations > 0 && rng.random_bool(self.qualified_fraction) {
                let q = self.n_main_relations + rng.random_range(0..self.n_qualifier_relations);
                let e = *members[maps[q][self.cluster_of(t)]]
                    .choose(&mut rng)
                    .expect("non-empty cluster");
                s = s.with_qualifiers([(q, e)]);
            }
            if seen.insert(s.clone()) {
                statements.push(s);
            }
        }
        let n_valid = (self.valid_fraction * statements.len() as f64).round() as usize;
        let mut g = KnowledgeGraph::new(
            Vocabulary::numbered("e", n),
            Vocabulary::numbered("r", n_rel),
        );
        for (i, s) in statements.into_iter().enumerate() {
            let split = if i < n_valid {
                Split::Valid
            } else {
                Split::Train
            };
            g.push(s, split).expect("ids drawn in range");
        }
        g
    }
}
