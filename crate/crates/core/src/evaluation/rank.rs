use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::scalar::Scalar;
use crate::store::EntityId;

/// How exact score ties with the gold entity are counted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TiePolicy {
    /// Gold ranks above every tied competitor.
    Optimistic,
    /// Gold ranks below every tied competitor.
    Pessimistic,
    /// Gold takes the mean of the tied positions.
    #[default]
    Mean,
}

impl TiePolicy {
    fn weight(self) -> f64 {
        match self {
            TiePolicy::Optimistic => 0.0,
            TiePolicy::Pessimistic => 1.0,
            TiePolicy::Mean => 0.5,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TiePolicy::Optimistic => "optimistic",
            TiePolicy::Pessimistic => "pessimistic",
            TiePolicy::Mean => "mean",
        }
    }
}

impl fmt::Display for TiePolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TiePolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "optimistic" => Ok(TiePolicy::Optimistic),
            "pessimistic" => Ok(TiePolicy::Pessimistic),
            "mean" => Ok(TiePolicy::Mean),
            other => Err(Error::Config(format!(
                "unknown tie policy '{other}' (expected optimistic, pessimistic or mean)"
            ))),
        }
    }
}

/// Filtered rank of `gold` among `scores`.
///
/// Entities in `filter` other than the gold one are dropped from the
/// candidate pool. A NaN gold score ranks last.
pub fn filtered_rank<F: Scalar>(
    scores: &[F],
    gold: EntityId,
    filter: &[EntityId],
    policy: TiePolicy,
) -> f64 {
    if !strictly_sorted(filter) {
        let mut f = filter.to_vec();
        f.sort_unstable();
        f.dedup();
        return filtered_rank(scores, gold, &f, policy);
    }
    let target = scores[gold];
    if target.is_nan() {
        let removed = filter
            .iter()
            .filter(|&&j| j != gold && j < scores.len())
            .count();
        return (scores.len() - removed) as f64;
    }
    let (mut greater, mut ties) = (0usize, 0usize);
    for (j, &s) in scores.iter().enumerate() {
        if j == gold {
            continue;
        }
        if s > target {
            greater += 1;
        } else if s == target {
            ties += 1;
        }
    }
    for &j in filter {
        if j == gold || j >= scores.len() {
            continue;
        }
        let s = scores[j];
        if s > target {
            greater -= 1;
        } else if s == target {
            ties -= 1;
        }
    }
    1.0 + greater as f64 + policy.weight() * ties as f64
}

fn strictly_sorted(filter: &[EntityId]) -> bool {
    filter.windows(2).all(|w| w[0] < w[1])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unique_max_is_first() {
        assert_eq!(
            filtered_rank(&[0.1f32, 0.9, 0.3], 1, &[], TiePolicy::Mean),
            1.0
        );
    }

    #[test]
    fn filtered_competitor_removed() {
        let s = [0.9f32, 0.8, 0.7];
        assert_eq!(filtered_rank(&s, 2, &[0, 2], TiePolicy::Mean), 2.0);
        assert_eq!(filtered_rank(&s, 2, &[], TiePolicy::Mean), 3.0);
    }

    #[test]
    fn all_ties() {
        let s = [0.5f64; 5];
        assert_eq!(filtered_rank(&s, 3, &[], TiePolicy::Mean), 3.0);
        assert_eq!(filtered_rank(&s, 3, &[], TiePolicy::Optimistic), 1.0);
        assert_eq!(filtered_rank(&s, 3, &[], TiePolicy::Pessimistic), 5.0);
        assert_eq!(filtered_rank(&s, 3, &[0, 1], TiePolicy::Mean), 2.0);
    }

    #[test]
    fn parse_policy() {
        assert_eq!(
            "pessimistic".parse::<TiePolicy>().unwrap(),
            TiePolicy::Pessimistic
        );
        assert!("best".parse::<TiePolicy>().is_err());
    }

    #[test]
    fn unsorted_or_repeated_filter() {
        let s = [0.9f32, 0.8, 0.7, 0.75];
        assert_eq!(filtered_rank(&s, 2, &[1, 0, 1], TiePolicy::Mean), 2.0);
    }

    #[test]
    fn nan_gold_ranks_last() {
        let s = [0.9f32, f32::NAN, 0.7];
        assert_eq!(filtered_rank(&s, 1, &[], TiePolicy::Mean), 3.0);
        assert_eq!(filtered_rank(&s, 1, &[0], TiePolicy::Mean), 2.0);
    }
}
