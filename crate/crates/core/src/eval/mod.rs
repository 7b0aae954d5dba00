//! Ranking metrics, segment ranking sources, ROUGE and the evaluation
//! harness.

mod metrics;
mod ranking;
mod report;
mod rouge;

pub use metrics::{dcg, dcg_with_base, greedy_match_relevance, ndcg, ndcg_at, ndcg_with_base};
pub use ranking::{attention_mass, rank_by_attention, rank_by_ltr, RankedList};
pub use report::{evaluate, DocumentEval, EvalConfig, EvalReport};
pub use rouge::{rouge, Rouge, RougeVariant};
