use serde::{Deserialize, Serialize};

use super::metrics::ndcg_at;
use super::ranking::{rank_by_attention, RankedList};
use super::rouge::{rouge, RougeVariant};
use crate::corpus::Document;
use crate::error::{Error, Result};
use crate::labeling::{label_document, DEFAULT_THRESHOLD};
use crate::nn::Model;
use crate::par;
use crate::segmenter::{segment_document, SegmentationConfig};

/// Decode length used when a document has no reference summary.
const FALLBACK_DECODE_LEN: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub segmentation: SegmentationConfig,
    pub threshold: f64,
    pub k: usize,
    pub parallel: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            segmentation: SegmentationConfig::default(),
            threshold: DEFAULT_THRESHOLD,
            k: 5,
            parallel: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocumentEval {
    pub doc_id: String,
    pub segments: usize,
    /// None when the document has no positive gold label.
    pub ndcg_ltr: Option<f64>,
    pub ndcg_attention: Option<f64>,
    pub ltr_order: Vec<usize>,
    pub attention_order: Vec<usize>,
    /// ROUGE F1 of the greedy decode; None without a reference summary.
    pub rouge1: Option<f64>,
    pub rouge2: Option<f64>,
    pub rouge_l: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub k: usize,
    pub documents: Vec<DocumentEval>,
    pub mean_ndcg_ltr: Option<f64>,
    pub mean_ndcg_attention: Option<f64>,
    pub mean_rouge1: Option<f64>,
    pub mean_rouge2: Option<f64>,
    pub mean_rouge_l: Option<f64>,
}

fn mean(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn evaluate_one(model: &Model, doc: &Document, cfg: &EvalConfig) -> Result<DocumentEval> {
    let segs = segment_document(doc, &cfg.segmentation)?;
    let labels = label_document(doc, &segs, cfg.threshold).labels;
    let enc = model.encode_segments(&segs)?;
    let ltr = RankedList::from_scores(&model.ltr_forward(&enc)?);

    let reference = doc.reference_summary.as_deref();
    let decode_len = reference.map_or(FALLBACK_DECODE_LEN, |r| r.len().max(1));
    let (decoded, trace) = model.greedy_decode(&enc, decode_len)?;
    let attention = rank_by_attention(&trace);

    let has_gold = labels.iter().any(|&l| l > 0);
    let score = |r: &RankedList| -> Result<Option<f64>> {
        if has_gold {
            Ok(Some(ndcg_at(r, &labels, cfg.k)?))
        } else {
            Ok(None)
        }
    };
    let rouge_f1 = |v| -> Result<Option<f64>> {
        match reference {
            Some(r) if !r.is_empty() => Ok(Some(rouge(&decoded, r, v)?.f1)),
            _ => Ok(None),
        }
    };
    Ok(DocumentEval {
        doc_id: doc.doc_id.clone(),
        segments: segs.len(),
        ndcg_ltr: score(&ltr)?,
        ndcg_attention: score(&attention)?,
        ltr_order: ltr.order,
        attention_order: attention.order,
        rouge1: rouge_f1(RougeVariant::One)?,
        rouge2: rouge_f1(RougeVariant::Two)?,
        rouge_l: rouge_f1(RougeVariant::L)?,
    })
}

/// nDCG@k for both ranking sources and ROUGE of greedy decodes, per
/// document and averaged.
pub fn evaluate(model: &Model, docs: &[Document], cfg: &EvalConfig) -> Result<EvalReport> {
    if docs.is_empty() {
        return Err(Error::Validation("evaluation set is empty".into()));
    }
    if cfg.k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    let vocab_size = model.config.vocab_size;
    for d in docs {
        if let Err(e) = d.validate(vocab_size) {
            return Err(Error::VocabMismatch(e.to_string()));
        }
    }
    let documents = par::map_ordered(docs, cfg.parallel, |d| evaluate_one(model, d, cfg))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport {
        k: cfg.k,
        mean_ndcg_ltr: mean(documents.iter().map(|d| d.ndcg_ltr)),
        mean_ndcg_attention: mean(documents.iter().map(|d| d.ndcg_attention)),
        mean_rouge1: mean(documents.iter().map(|d| d.rouge1)),
        mean_rouge2: mean(documents.iter().map(|d| d.rouge2)),
        mean_rouge_l: mean(documents.iter().map(|d| d.rouge_l)),
        documents,
    })
}
