//! Segment relevance pseudo-labels from span alignments.
//!
//! A segment scores `sum_j p_j * ln(|span_j ∩ segment|)` over alignments whose
//! probability exceeds the threshold; scores are then turned into dense graded
//! labels, highest distinct positive score first.

use crate::corpus::{Document, SpanAlignment};
use crate::error::Result;
use crate::par;
use crate::segmenter::{segment_document, Segment, SegmentationConfig};

pub const DEFAULT_THRESHOLD: f64 = 0.4;

#[derive(Debug, Clone, PartialEq)]
pub struct RelevanceLabelSet {
    pub scores: Vec<f64>,
    pub labels: Vec<u32>,
    pub threshold_used: f64,
    /// Set when the document carried no alignments at all.
    pub missing_alignments: bool,
}

impl RelevanceLabelSet {
    pub fn has_positive(&self) -> bool {
        self.labels.iter().any(|&l| l > 0)
    }
}

fn overlap(a: &SpanAlignment, seg: &Segment) -> usize {
    let lo = a.source_start.max(seg.source_start);
    let hi = a.end().min(seg.source_end);
    hi.saturating_sub(lo)
}

pub fn score_segment(seg: &Segment, alignments: &[SpanAlignment], threshold: f64) -> f64 {
    alignments
        .iter()
        .filter(|a| a.probability > threshold)
        .filter_map(|a| match overlap(a, seg) {
            0 => None,
            n => Some(a.probability * (n as f64).ln()),
        })
        .fold(0.0, |acc, x| acc + x)
}

/// Dense descending grades: the largest distinct positive score gets the
/// number of distinct positive scores, the smallest gets 1, and scores ≤ 0
/// get 0.
pub fn assign_labels(scores: &[f64]) -> Vec<u32> {
    let mut distinct: Vec<f64> = scores.iter().copied().filter(|&s| s > 0.0).collect();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    scores
        .iter()
        .map(|&s| {
            if s > 0.0 {
                // position among ascending distinct positives, 1-based
                distinct.partition_point(|&d| d < s) as u32 + 1
            } else {
                0
            }
        })
        .collect()
}

pub fn label_document(doc: &Document, segs: &[Segment], threshold: f64) -> RelevanceLabelSet {
    let alignments = doc.alignments.as_deref().unwrap_or(&[]);
    let scores: Vec<f64> = segs
        .iter()
        .map(|s| score_segment(s, alignments, threshold))
        .collect();
    let labels = assign_labels(&scores);
    RelevanceLabelSet {
        scores,
        labels,
        threshold_used: threshold,
        missing_alignments: doc.alignments.is_none(),
    }
}

/// A document with its segments and labels.
#[derive(Debug, Clone)]
pub struct LabeledDocument {
    pub segments: Vec<Segment>,
    pub labels: RelevanceLabelSet,
}

#[derive(Debug, Clone)]
pub struct LabeledCorpus {
    pub docs: Vec<LabeledDocument>,
    /// Documents that had no alignments and therefore only zero labels.
    pub missing_alignment_docs: usize,
}

pub fn label_corpus(
    docs: &[Document],
    seg_cfg: &SegmentationConfig,
    threshold: f64,
    parallel: bool,
) -> Result<LabeledCorpus> {
    seg_cfg.validate()?;
    let labeled = par::map_ordered(docs, parallel, |doc| -> Result<LabeledDocument> {
        let segments = segment_document(doc, seg_cfg)?;
        let labels = label_document(doc, &segments, threshold);
        Ok(LabeledDocument { segments, labels })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let missing_alignment_docs = labeled
        .iter()
        .filter(|d| d.labels.missing_alignments)
        .count();
    Ok(LabeledCorpus {
        docs: labeled,
        missing_alignment_docs,
    })
}
