//! Synthetic corpus with planted gold regions.
//!
//! The source is cut into equal slots, one per planted region. Gold regions
//! draw tokens from a "salient" word pool shared with the summary; distractor
//! regions draw from their own pool and get alignment probabilities below
//! 0.4. Longer gold regions get higher probabilities, so a segment's
//! relevance grows with the number of salient tokens it holds.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Corpus, Document, SpanAlignment, TokenId, Vocab};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub doc_len: usize,
    pub n_gold: usize,
    pub gold_len_min: usize,
    pub gold_len_max: usize,
    pub n_distractors: usize,
    pub distractor_len: usize,
    pub query_len: usize,
    /// Leading tokens of each gold region copied into the summary.
    pub summary_per_gold: usize,
    /// Number of plain words in the generated vocabulary.
    pub vocab_size: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            doc_len: 240,
            n_gold: 2,
            gold_len_min: 6,
            gold_len_max: 16,
            n_distractors: 2,
            distractor_len: 8,
            query_len: 4,
            summary_per_gold: 4,
            vocab_size: 160,
        }
    }
}

struct Pools {
    query: Vec<TokenId>,
    salient: Vec<TokenId>,
    distractor: Vec<TokenId>,
    filler: Vec<TokenId>,
}

impl SynthConfig {
    pub fn slot_len(&self) -> usize {
        self.doc_len / (self.n_gold + self.n_distractors).max(1)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.n_gold == 0 {
            return fail("n_gold must be at least 1".into());
        }
        if self.gold_len_min == 0 || self.gold_len_min > self.gold_len_max {
            return fail(format!(
                "gold length range [{}, {}] is empty",
                self.gold_len_min, self.gold_len_max
            ));
        }
        if self.n_distractors > 0 && self.distractor_len == 0 {
            return fail("distractor_len must be at least 1".into());
        }
        let slot = self.slot_len();
        if self.gold_len_max > slot || (self.n_distractors > 0 && self.distractor_len > slot) {
            return fail(format!(
                "{} planted regions of up to {} tokens do not fit a source of {} tokens",
                self.n_gold + self.n_distractors,
                self.gold_len_max.max(self.distractor_len),
                self.doc_len
            ));
        }
        if self.query_len == 0 {
            return fail("query_len must be at least 1".into());
        }
        if self.summary_per_gold == 0 || self.summary_per_gold > self.gold_len_min {
            return fail(format!(
                "summary_per_gold must lie in [1, {}]",
                self.gold_len_min
            ));
        }
        if self.vocab_size < 16 {
            return fail("vocab_size must be at least 16".into());
        }
        Ok(())
    }

    fn pools(&self, vocab: &mut Vocab) -> Pools {
        let n_query = self.vocab_size / 8;
        let n_distractor = self.vocab_size / 8;
        let n_salient = self.vocab_size / 4;
        let n_filler = self.vocab_size - n_query - n_distractor - n_salient;
        let mut pool = |prefix: &str, n: usize| -> Vec<TokenId> {
            (0..n).map(|i| vocab.add(&format!("{prefix}{i}"))).collect()
        };
        Pools {
            query: pool("q", n_query),
            salient: pool("s", n_salient),
            distractor: pool("d", n_distractor),
            filler: pool("f", n_filler),
        }
    }
}

fn pick(rng: &mut ChaCha8Rng, pool: &[TokenId], n: usize) -> Vec<TokenId> {
    (0..n).map(|_| pool[rng.random_range(0..pool.len())]).collect()
}

/// Generates `n_docs` documents; identical arguments give identical corpora.
pub fn generate_synthetic(seed: u64, n_docs: usize, cfg: &SynthConfig) -> Result<Corpus> {
    cfg.validate()?;
    let mut vocab = Vocab::new();
    let pools = cfg.pools(&mut vocab);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let slot_len = cfg.slot_len();
    let n_slots = cfg.n_gold + cfg.n_distractors;

    let mut docs = Vec::with_capacity(n_docs);
    for i in 0..n_docs {
        let query = pick(&mut rng, &pools.query, cfg.query_len);
        let mut source = pick(&mut rng, &pools.filler, cfg.doc_len);

        let mut slots: Vec<usize> = (0..n_slots).collect();
        slots.shuffle(&mut rng);

        let mut gold = Vec::with_capacity(cfg.n_gold);
        let mut alignments = Vec::with_capacity(n_slots);
        for (k, &slot) in slots.iter().enumerate() {
            let is_gold = k < cfg.n_gold;
            let (len, p, pool) = if is_gold {
                let p: f64 = rng.random_range(0.6..=1.0);
                let spread = (cfg.gold_len_max - cfg.gold_len_min) as f64;
                let len = cfg.gold_len_min + ((p - 0.6) / 0.4 * spread).round() as usize;
                (len, p, &pools.salient)
            } else {
                let p: f64 = rng.random_range(0.0..0.4);
                (cfg.distractor_len, p, &pools.distractor)
            };
            let offset = rng.random_range(0..=slot_len - len);
            let start = slot * slot_len + offset;
            let tokens = pick(&mut rng, pool, len);
            source[start..start + len].copy_from_slice(&tokens);
            if is_gold {
                gold.push((start, tokens));
            }
            alignments.push(SpanAlignment {
                source_start: start,
                span_len: len,
                probability: p,
            });
        }
        alignments.sort_by_key(|a| a.source_start);
        gold.sort_by_key(|(start, _)| *start);
        let summary: Vec<TokenId> = gold
            .iter()
            .flat_map(|(_, t)| t[..cfg.summary_per_gold].iter().copied())
            .collect();

        docs.push(Document {
            doc_id: format!("synth-{seed}-{i:04}"),
            query,
            source,
            reference_summary: Some(summary),
            alignments: Some(alignments),
        });
    }
    Ok(Corpus { vocab, docs })
}
