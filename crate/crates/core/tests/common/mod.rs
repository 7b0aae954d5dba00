//! Oracles and fixtures shared by the integration tests. Everything here is
//! written independently of the library code it checks.

#![allow(dead_code)]

use ltrsum::corpus::{Document, SpanAlignment, TokenId, Vocab};
use ltrsum::losses::TargetMode;
use ltrsum::nn::{LtrHead, LtrMemory, Model, ModelConfig, Tensors, TrainingExample};
use ltrsum::segmenter::Segment;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn micro_config(head: LtrHead, memory: LtrMemory) -> ModelConfig {
    ModelConfig {
        d_model: 8,
        n_heads: 2,
        n_layers: 1,
        ffn_mult: 2,
        vocab_size: 12,
        max_positions: 16,
        seed: 7,
        ltr_memory: memory,
        ltr_head: head,
    }
}

fn framed(index: usize, body: &[TokenId]) -> Segment {
    let mut tokens = vec![Vocab::BOS, 5, Vocab::SEP];
    tokens.extend_from_slice(body);
    Segment {
        index,
        framed_tokens: tokens,
        source_start: 0,
        source_end: body.len(),
    }
}

/// Two segments of different length and a 3-token summary.
pub fn micro_example() -> TrainingExample {
    TrainingExample {
        segments: vec![framed(0, &[6, 7, 8]), framed(1, &[9, 10])],
        summary: vec![7, 10, 11],
        labels: vec![1, 2],
    }
}

/// Moves every parameter away from its structured initial value so biases
/// and norm scales carry non-trivial gradients.
pub fn perturb_params(model: &mut Model, seed: u64) {
    let mut r = rng(seed);
    for t in model.params.tensors_mut() {
        let base = if t.name.ends_with("gamma") { 1.0 } else { 0.0 };
        for v in t.data.iter_mut() {
            *v = base + r.random_range(-0.5..0.5);
        }
    }
}

pub struct TensorCheck {
    pub name: String,
    pub analytic_norm: f64,
    pub numeric_norm: f64,
    pub rel_err: f64,
}

/// Below this norm a gradient is treated as identically zero, so the
/// relative error is taken against the floor instead of rounding noise.
pub const GRAD_NORM_FLOOR: f64 = 1e-6;

/// Central differences of the joint loss against `loss_and_grad`, reported
/// per tensor as `‖a − n‖ / max(‖a‖, ‖n‖, GRAD_NORM_FLOOR)`.
pub fn gradient_check(model: &Model, ex: &TrainingExample, lambda: f64, h: f64) -> Vec<TensorCheck> {
    let mode = TargetMode::Normalized;
    let (_, grads) = model
        .loss_and_grad(ex, lambda, mode, ltrsum::nn::Objective::Joint)
        .unwrap();
    let analytic: Vec<(String, Vec<f64>)> = grads
        .tensors()
        .into_iter()
        .map(|t| (t.name, t.data.to_vec()))
        .collect();
    let mut out = Vec::new();
    for (ti, (name, a)) in analytic.iter().enumerate() {
        let mut numeric = vec![0.0; a.len()];
        for (i, slot) in numeric.iter_mut().enumerate() {
            let eval = |delta: f64| {
                let mut m = model.clone();
                m.params.tensors_mut()[ti].data[i] += delta;
                m.loss(ex, lambda, mode).unwrap().joint
            };
            *slot = (eval(h) - eval(-h)) / (2.0 * h);
        }
        let diff = a.iter().zip(&numeric).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let an = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nn = numeric.iter().map(|x| x * x).sum::<f64>().sqrt();
        let rel_err = diff / an.max(nn).max(GRAD_NORM_FLOOR);
        out.push(TensorCheck {
            name: name.clone(),
            analytic_norm: an,
            numeric_norm: nn,
            rel_err,
        });
    }
    out
}

/// Relevance score by walking every source position of the segment.
pub fn brute_score(seg_start: usize, seg_end: usize, spans: &[SpanAlignment], threshold: f64) -> f64 {
    let mut total = 0.0;
    for a in spans {
        if a.probability <= threshold {
            continue;
        }
        let shared = (seg_start..seg_end)
            .filter(|&pos| pos >= a.source_start && pos < a.source_start + a.span_len)
            .count();
        if shared > 0 {
            total += a.probability * (shared as f64).ln();
        }
    }
    total
}

/// Dense grades from an exhaustive sort of (score, index) pairs.
pub fn brute_labels(scores: &[f64]) -> Vec<u32> {
    let mut pairs: Vec<(f64, usize)> = scores.iter().copied().zip(0..).collect();
    pairs.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    let positive: Vec<f64> = pairs.iter().map(|p| p.0).filter(|&s| s > 0.0).collect();
    let mut distinct = 0u32;
    let mut prev = f64::NAN;
    let mut rank_of = Vec::new();
    for s in positive {
        if s != prev {
            distinct += 1;
            prev = s;
        }
        rank_of.push((s, distinct));
    }
    let mut labels = vec![0; scores.len()];
    for (i, &s) in scores.iter().enumerate() {
        if let Some(&(_, r)) = rank_of.iter().find(|(v, _)| *v == s) {
            labels[i] = distinct - r + 1;
        }
    }
    labels
}

/// Random document whose spans sometimes sit exactly on `thresholds`.
pub fn random_document(r: &mut ChaCha8Rng, thresholds: &[f64]) -> Document {
    let len = r.random_range(1..60);
    let n_spans = r.random_range(0..6);
    let spans = (0..n_spans)
        .map(|_| {
            let start = r.random_range(0..len);
            let span_len = r.random_range(1..=len - start);
            let probability = if r.random_bool(0.2) {
                thresholds[r.random_range(0..thresholds.len())]
            } else {
                r.random_range(0.0..=1.0)
            };
            SpanAlignment {
                source_start: start,
                span_len,
                probability,
            }
        })
        .collect();
    Document {
        doc_id: "rand".into(),
        query: vec![5, 6],
        source: (0..len).map(|i| 5 + (i % 7) as TokenId).collect(),
        reference_summary: None,
        alignments: Some(spans),
    }
}

/// DCG with gain `2^rel − 1` and discount `log_base(i + 1)` for 1-based `i`.
pub fn dcg_oracle(rel: &[u32], base: f64) -> f64 {
    rel.iter()
        .enumerate()
        .map(|(i, &r)| (2f64.powi(r as i32) - 1.0) / ((i + 2) as f64).log(base))
        .sum()
}

pub fn ndcg_oracle(order: &[usize], gold: &[u32], base: f64) -> f64 {
    let got: Vec<u32> = order.iter().map(|&i| gold[i]).collect();
    let mut ideal = gold.to_vec();
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    dcg_oracle(&got, base) / dcg_oracle(&ideal, base)
}
