use super::ranking::RankedList;
use crate::error::{Error, Result};

fn discounted(rel: &[u32], p: usize, log: impl Fn(f64) -> f64) -> Result<f64> {
    if p == 0 || p > rel.len() {
        return Err(Error::Precondition(format!(
            "rank cutoff {p} outside [1, {}]",
            rel.len()
        )));
    }
    Ok(rel[..p]
        .iter()
        .enumerate()
        .map(|(i, &r)| (2f64.powi(r as i32) - 1.0) / log((i + 2) as f64))
        .sum())
}

/// `Σ_{i=1..p} (2^rel_i − 1) / log_base(i + 1)`.
pub fn dcg_with_base(rel: &[u32], p: usize, base: f64) -> Result<f64> {
    discounted(rel, p, |x| x.log(base))
}

/// DCG with base-2 discounts.
pub fn dcg(rel: &[u32], p: usize) -> Result<f64> {
    discounted(rel, p, f64::log2)
}

/// Gold label of each predicted position, walking the predicted order.
pub fn greedy_match_relevance(pred: &RankedList, gold: &[u32]) -> Vec<u32> {
    pred.order.iter().map(|&i| gold[i]).collect()
}

fn ideal(gold: &[u32]) -> Vec<u32> {
    let mut v = gold.to_vec();
    v.sort_unstable_by(|a, b| b.cmp(a));
    v
}

fn check(pred: &RankedList, gold: &[u32]) -> Result<()> {
    if pred.order.len() != gold.len() {
        return Err(Error::Shape(format!(
            "ranked list of {} segments against {} gold labels",
            pred.order.len(),
            gold.len()
        )));
    }
    let mut seen = vec![false; gold.len()];
    for &i in &pred.order {
        if i >= gold.len() || std::mem::replace(&mut seen[i], true) {
            return Err(Error::Validation("ranked order is not a permutation".into()));
        }
    }
    if gold.iter().all(|&g| g == 0) {
        return Err(Error::UndefinedNdcg);
    }
    Ok(())
}

/// `DCG_p / IDCG_p` with relevance read off the gold labels in predicted
/// order.
pub fn ndcg(pred: &RankedList, gold: &[u32], p: usize) -> Result<f64> {
    check(pred, gold)?;
    let rel = greedy_match_relevance(pred, gold);
    Ok(dcg(&rel, p)? / dcg(&ideal(gold), p)?)
}

pub fn ndcg_with_base(pred: &RankedList, gold: &[u32], p: usize, base: f64) -> Result<f64> {
    check(pred, gold)?;
    let rel = greedy_match_relevance(pred, gold);
    Ok(dcg_with_base(&rel, p, base)? / dcg_with_base(&ideal(gold), p, base)?)
}

/// nDCG@k with `k` clamped to the list length.
pub fn ndcg_at(pred: &RankedList, gold: &[u32], k: usize) -> Result<f64> {
    ndcg(pred, gold, k.clamp(1, gold.len().max(1)))
}
