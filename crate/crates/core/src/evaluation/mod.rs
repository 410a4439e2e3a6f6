//! Filtered ranking: MRR and hits@k for head and tail prediction.

mod evaluate;
mod rank;
mod report;

pub use evaluate::{
    check_checkpoint_vocabulary, check_model_matches, evaluate, evaluate_checkpoint,
    evaluate_with_index, rank_queries, EvalOptions,
};
pub use rank::{filtered_rank, TiePolicy};
pub use report::{Metrics, RankReport, SlotMetrics};
