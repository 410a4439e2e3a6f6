use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::rank::TiePolicy;
use crate::store::{CompletionQuery, Slot};

/// MRR and hits over one pool of ranks.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Metrics {
    pub mrr: f64,
    pub h1: f64,
    pub h3: f64,
    pub h10: f64,
    pub count: usize,
}

impl Metrics {
    pub fn from_ranks(ranks: &[f64]) -> Self {
        if ranks.is_empty() {
            return Metrics::default();
        }
        let n = ranks.len() as f64;
        let hits = |k: f64| ranks.iter().filter(|&&r| r <= k).count() as f64 / n;
        Metrics {
            mrr: ranks.iter().map(|r| 1.0 / r).sum::<f64>() / n,
            h1: hits(1.0),
            h3: hits(3.0),
            h10: hits(10.0),
            count: ranks.len(),
        }
    }

    /// Unweighted mean of two pools; an empty pool defers to the other.
    pub fn average(a: &Metrics, b: &Metrics) -> Self {
        match (a.count, b.count) {
            (0, _) => *b,
            (_, 0) => *a,
            _ => Metrics {
                mrr: (a.mrr + b.mrr) / 2.0,
                h1: (a.h1 + b.h1) / 2.0,
                h3: (a.h3 + b.h3) / 2.0,
                h10: (a.h10 + b.h10) / 2.0,
                count: a.count + b.count,
            },
        }
    }
}

/// Head, tail and averaged metrics.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SlotMetrics {
    pub head: Metrics,
    pub tail: Metrics,
    pub overall: Metrics,
}

impl SlotMetrics {
    fn new(head: &[f64], tail: &[f64]) -> Self {
        let head = Metrics::from_ranks(head);
        let tail = Metrics::from_ranks(tail);
        SlotMetrics {
            overall: Metrics::average(&head, &tail),
            head,
            tail,
        }
    }
}

/// Filtered-ranking results for one split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankReport {
    pub split: String,
    pub tie_policy: TiePolicy,
    pub head: Metrics,
    pub tail: Metrics,
    pub overall: Metrics,
    /// Keyed by the number of qualifier pairs of the source statement.
    pub by_qualifiers: BTreeMap<usize, SlotMetrics>,
    /// Qualifier-entity queries, kept out of the headline numbers.
    pub aux: Option<Metrics>,
    pub n_queries: usize,
}

impl RankReport {
    /// Builds a report from per-query ranks aligned with `queries`.
    pub fn from_ranks(
        split: &str,
        tie_policy: TiePolicy,
        queries: &[CompletionQuery],
        ranks: &[f64],
    ) -> Self {
        assert_eq!(queries.len(), ranks.len(), "one rank per query");
        let (mut head, mut tail, mut aux) = (Vec::new(), Vec::new(), Vec::new());
        let mut buckets: BTreeMap<usize, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
        for (q, &r) in queries.iter().zip(ranks) {
            let n = q.source.n_qualifiers();
            match q.slot {
                Slot::Head => {
                    head.push(r);
                    buckets.entry(n).or_default().0.push(r);
                }
                Slot::Tail => {
                    tail.push(r);
                    buckets.entry(n).or_default().1.push(r);
                }
                Slot::QualifierEntity(_) => aux.push(r),
            }
        }
        let main = SlotMetrics::new(&head, &tail);
        RankReport {
            split: split.to_owned(),
            tie_policy,
            head: main.head,
            tail: main.tail,
            overall: main.overall,
            by_qualifiers: buckets
                .into_iter()
                .map(|(n, (h, t))| (n, SlotMetrics::new(&h, &t)))
                .collect(),
            aux: (!aux.is_empty()).then(|| Metrics::from_ranks(&aux)),
            n_queries: head.len() + tail.len(),
        }
    }

    pub fn mrr(&self) -> f64 {
        self.overall.mrr
    }

    /// Human-readable table; `breakdown` adds one row pair per qualifier count.
    pub fn to_table(&self, breakdown: bool) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "split: {}  queries: {}  ties: {}",
            self.split, self.n_queries, self.tie_policy
        );
        let _ = writeln!(
            out,
            "{:<22} {:>7} {:>7} {:>7} {:>7} {:>8}",
            "", "MRR", "H@1", "H@3", "H@10", "count"
        );
        let mut row = |label: &str, m: &Metrics| {
            let _ = writeln!(
                out,
                "{label:<22} {:>7.3} {:>7.3} {:>7.3} {:>7.3} {:>8}",
                m.mrr, m.h1, m.h3, m.h10, m.count
            );
        };
        row("overall", &self.overall);
        row("head", &self.head);
        row("tail", &self.tail);
        if breakdown {
            for (n, m) in &self.by_qualifiers {
                row(&format!("qualifiers={n}"), &m.overall);
            }
        }
        if let Some(aux) = &self.aux {
            row("qualifier entity (aux)", aux);
        }
        out
    }

    /// One JSON object on a single line.
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("report serializes")
    }
}
