//! Query-focused summarization with an auxiliary learning-to-rank objective.
//!
//! The pipeline splits each source document into overlapping windows framed
//! as `<s> query </s> window`, derives graded segment relevance labels from
//! span alignments, and trains a small encoder–decoder whose single decoder
//! runs twice per document: once to generate the summary over all segment
//! encodings and once per segment to produce a ranking score read off the
//! logit of a reserved `<extra_token>`. The two objectives are combined as
//! `generation + lambda * listwise_softmax`.
//!
//! Data-parallel work (per-document gradients, labeling, evaluation) runs on
//! rayon when the `parallel` feature is enabled; results are reduced in a
//! fixed order so they match the sequential path bit for bit.

pub mod cli;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod labeling;
pub mod losses;
pub mod nn;
pub mod par;
pub mod segmenter;
pub mod trainer;

pub use error::{Error, Result};
