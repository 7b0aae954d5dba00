use crate::error::Result;
use crate::nn::{ForwardTrace, Model};
use crate::segmenter::Segment;

/// Segment indices best-first with their scores.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedList {
    pub order: Vec<usize>,
    pub scores: Vec<f64>,
}

impl RankedList {
    /// Sorts by score descending; equal scores keep ascending index order.
    pub fn from_scores(scores: &[f64]) -> Self {
        let mut order: Vec<usize> = (0..scores.len()).collect();
        order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
        let sorted = order.iter().map(|&i| scores[i]).collect();
        RankedList {
            order,
            scores: sorted,
        }
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }
}

pub fn rank_by_ltr(model: &Model, segs: &[Segment]) -> Result<RankedList> {
    let enc = model.encode_segments(segs)?;
    Ok(RankedList::from_scores(&model.ltr_forward(&enc)?))
}

/// Cross-attention weight per segment, summed over its positions and all
/// decoding steps.
pub fn attention_mass(trace: &ForwardTrace) -> Vec<f64> {
    trace
        .segment_ranges
        .iter()
        .map(|r| {
            trace
                .cross_attention
                .rows()
                .into_iter()
                .map(|row| row.iter().skip(r.start).take(r.len()).sum::<f64>())
                .sum()
        })
        .collect()
}

pub fn rank_by_attention(trace: &ForwardTrace) -> RankedList {
    RankedList::from_scores(&attention_mass(trace))
}
