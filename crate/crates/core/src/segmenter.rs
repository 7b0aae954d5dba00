//! Fixed-length overlapping windows framed as `<s> query </s> window`.

use serde::{Deserialize, Serialize};

use crate::corpus::{Document, TokenId, Vocab};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SegmentationConfig {
    pub window_len: usize,
    pub stride: usize,
    pub max_segments: usize,
    /// Longer queries are truncated to this many tokens before framing.
    pub max_query_len: usize,
}

impl Default for SegmentationConfig {
    fn default() -> Self {
        SegmentationConfig {
            window_len: 48,
            stride: 24,
            max_segments: 16,
            max_query_len: 16,
        }
    }
}

impl SegmentationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window_len == 0 {
            return Err(Error::Config("window_len must be at least 1".into()));
        }
        if self.stride == 0 || self.stride > self.window_len {
            return Err(Error::Config(format!(
                "stride must lie in [1, window_len={}], got {}",
                self.window_len, self.stride
            )));
        }
        if self.max_segments == 0 {
            return Err(Error::Config("max_segments must be at least 1".into()));
        }
        if self.max_query_len == 0 {
            return Err(Error::Config("max_query_len must be at least 1".into()));
        }
        Ok(())
    }

    /// Upper bound on the framed length of any segment.
    pub fn max_framed_len(&self) -> usize {
        self.max_query_len + self.window_len + 2
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segment {
    pub index: usize,
    pub framed_tokens: Vec<TokenId>,
    pub source_start: usize,
    pub source_end: usize,
}

impl Segment {
    pub fn window_len(&self) -> usize {
        self.source_end - self.source_start
    }
}

/// Half-open source windows: starts at multiples of `stride`, stopping at the
/// first window that reaches the end of the source.
pub fn window_bounds(source_len: usize, window_len: usize, stride: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    if source_len == 0 {
        return out;
    }
    let mut start = 0;
    loop {
        let end = (start + window_len).min(source_len);
        out.push((start, end));
        if end == source_len {
            return out;
        }
        start += stride;
    }
}

pub fn segment_document(doc: &Document, cfg: &SegmentationConfig) -> Result<Vec<Segment>> {
    cfg.validate()?;
    let query = &doc.query[..doc.query.len().min(cfg.max_query_len)];
    let mut prefix = Vec::with_capacity(query.len() + 2);
    prefix.push(Vocab::BOS);
    prefix.extend_from_slice(query);
    prefix.push(Vocab::SEP);

    Ok(window_bounds(doc.source.len(), cfg.window_len, cfg.stride)
        .into_iter()
        .take(cfg.max_segments)
        .enumerate()
        .map(|(index, (start, end))| {
            let mut framed = prefix.clone();
            framed.extend_from_slice(&doc.source[start..end]);
            Segment {
                index,
                framed_tokens: framed,
                source_start: start,
                source_end: end,
            }
        })
        .collect())
}
