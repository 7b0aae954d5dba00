use std::ops::Range;

use ndarray::{s, Array2, Axis};

use super::layers::{AttentionCache, FeedForwardCache, LayerNormCache};
use super::params::ModelParams;
use super::{LtrHead, LtrMemory, ModelConfig};
use crate::corpus::{TokenId, Vocab};
use crate::error::{Error, Result};
use crate::losses::{self, RankingTarget, TargetMode};
use crate::segmenter::Segment;

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ModelParams,
}

/// Encoder output for a list of segments, padded to a common length.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentEncodings {
    /// One `[padded_len, d_model]` matrix per segment.
    pub states: Vec<Array2<f64>>,
    /// `false` at PAD positions.
    pub valid: Vec<Vec<bool>>,
}

impl SegmentEncodings {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Encoder vectors at each segment's `<s>` position, one row per segment.
    pub fn bos_vectors(&self) -> Array2<f64> {
        let d = self.states.first().map_or(0, |s| s.ncols());
        let mut out = Array2::zeros((self.len(), d));
        for (i, st) in self.states.iter().enumerate() {
            out.row_mut(i).assign(&st.row(0));
        }
        out
    }

    /// All segment states stacked into one memory with the row range of each
    /// segment.
    fn memory(&self) -> (Array2<f64>, Vec<bool>, Vec<Range<usize>>) {
        let views: Vec<_> = self.states.iter().map(|s| s.view()).collect();
        let memory = ndarray::concatenate(Axis(0), &views).expect("equal widths");
        let valid = self.valid.concat();
        let mut ranges = Vec::with_capacity(self.len());
        let mut at = 0;
        for st in &self.states {
            ranges.push(at..at + st.nrows());
            at += st.nrows();
        }
        (memory, valid, ranges)
    }
}

/// Attention bookkeeping from a generation pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    /// `[steps, memory positions]` cross-attention, averaged over heads and
    /// layers. Each row sums to 1.
    pub cross_attention: Array2<f64>,
    /// Memory rows belonging to each segment (PAD rows included, with zero
    /// weight).
    pub segment_ranges: Vec<Range<usize>>,
    pub bos_vectors: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingExample {
    pub segments: Vec<Segment>,
    pub summary: Vec<TokenId>,
    pub labels: Vec<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Objective {
    #[default]
    Joint,
    /// Only the generation loss is differentiated; the ranking loss is still
    /// evaluated for reporting.
    GenerationOnly,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExampleLoss {
    pub generation: f64,
    pub ranking: f64,
    pub joint: f64,
    /// False when the labels carried no positive mass and the ranking term
    /// was skipped.
    pub ranked: bool,
}

struct EncLayerCache {
    ln_attn: LayerNormCache,
    attn: AttentionCache,
    ln_ffn: LayerNormCache,
    ffn: FeedForwardCache,
}

struct EncoderCache {
    ids: Vec<TokenId>,
    layers: Vec<EncLayerCache>,
    norm: LayerNormCache,
}

struct DecLayerCache {
    ln_self: LayerNormCache,
    self_attn: AttentionCache,
    ln_cross: LayerNormCache,
    cross_attn: AttentionCache,
    ln_ffn: LayerNormCache,
    ffn: FeedForwardCache,
}

struct DecoderCache {
    ids: Vec<TokenId>,
    layers: Vec<DecLayerCache>,
    norm: LayerNormCache,
    hidden: Array2<f64>,
}

enum HeadCache {
    Tied,
    Untied(FeedForwardCache),
}

impl Model {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let params = ModelParams::init(&config);
        Ok(Model { config, params })
    }

    fn embed(&self, ids: &[TokenId]) -> Result<Array2<f64>> {
        if ids.len() > self.config.max_positions {
            return Err(Error::Shape(format!(
                "sequence of {} tokens exceeds max_positions {}",
                ids.len(),
                self.config.max_positions
            )));
        }
        let d = self.config.d_model;
        let mut x = Array2::zeros((ids.len(), d));
        for (t, &id) in ids.iter().enumerate() {
            if id as usize >= self.config.vocab_size {
                return Err(Error::Shape(format!(
                    "token id {id} outside vocabulary of {}",
                    self.config.vocab_size
                )));
            }
            let mut row = x.row_mut(t);
            row += &self.params.tok_emb.row(id as usize);
            row += &self.params.pos_emb.row(t);
        }
        Ok(x)
    }

    fn embed_backward(ids: &[TokenId], dx: &Array2<f64>, grads: &mut ModelParams) {
        for (t, &id) in ids.iter().enumerate() {
            let mut tok = grads.tok_emb.row_mut(id as usize);
            tok += &dx.row(t);
            let mut pos = grads.pos_emb.row_mut(t);
            pos += &dx.row(t);
        }
    }

    fn encoder_forward(&self, ids: &[TokenId], valid: &[bool]) -> Result<(Array2<f64>, EncoderCache)> {
        let heads = self.config.n_heads;
        let mut x = self.embed(ids)?;
        let mut layers = Vec::with_capacity(self.params.encoder.len());
        for layer in &self.params.encoder {
            let (a, ln_attn) = layer.ln_attn.forward(&x);
            let (att, attn) = layer.attn.forward(&a, &a, valid, false, heads);
            let h = x + att;
            let (b, ln_ffn) = layer.ln_ffn.forward(&h);
            let (f, ffn) = layer.ffn.forward(&b);
            x = h + f;
            layers.push(EncLayerCache {
                ln_attn,
                attn,
                ln_ffn,
                ffn,
            });
        }
        let (out, norm) = self.params.enc_norm.forward(&x);
        Ok((
            out,
            EncoderCache {
                ids: ids.to_vec(),
                layers,
                norm,
            },
        ))
    }

    fn encoder_backward(&self, cache: &EncoderCache, d_out: &Array2<f64>, grads: &mut ModelParams) {
        let p = &self.params;
        let mut dx = p.enc_norm.backward(&cache.norm, d_out, &mut grads.enc_norm);
        for (i, (layer, c)) in p.encoder.iter().zip(&cache.layers).enumerate().rev() {
            let g = &mut grads.encoder[i];
            let db = layer.ffn.backward(&c.ffn, &dx, &mut g.ffn);
            let dh = &dx + &layer.ln_ffn.backward(&c.ln_ffn, &db, &mut g.ln_ffn);
            let (dq, dkv) = layer.attn.backward(&c.attn, &dh, &mut g.attn);
            dx = &dh + &layer.ln_attn.backward(&c.ln_attn, &(dq + dkv), &mut g.ln_attn);
        }
        Self::embed_backward(&cache.ids, &dx, grads);
    }

    fn decoder_forward(
        &self,
        ids: &[TokenId],
        memory: &Array2<f64>,
        mem_valid: &[bool],
    ) -> Result<DecoderCache> {
        let heads = self.config.n_heads;
        let mut x = self.embed(ids)?;
        let self_valid = vec![true; ids.len()];
        let mut layers = Vec::with_capacity(self.params.decoder.len());
        for layer in &self.params.decoder {
            let (a, ln_self) = layer.ln_self.forward(&x);
            let (sa, self_attn) = layer.self_attn.forward(&a, &a, &self_valid, true, heads);
            let h1 = x + sa;
            let (b, ln_cross) = layer.ln_cross.forward(&h1);
            let (ca, cross_attn) = layer.cross_attn.forward(&b, memory, mem_valid, false, heads);
            let h2 = h1 + ca;
            let (c, ln_ffn) = layer.ln_ffn.forward(&h2);
            let (f, ffn) = layer.ffn.forward(&c);
            x = h2 + f;
            layers.push(DecLayerCache {
                ln_self,
                self_attn,
                ln_cross,
                cross_attn,
                ln_ffn,
                ffn,
            });
        }
        let (hidden, norm) = self.params.dec_norm.forward(&x);
        Ok(DecoderCache {
            ids: ids.to_vec(),
            layers,
            norm,
            hidden,
        })
    }

    /// Returns the gradient with respect to the cross-attention memory.
    fn decoder_backward(&self, cache: &DecoderCache, d_hidden: &Array2<f64>, mem_rows: usize, grads: &mut ModelParams) -> Array2<f64> {
        let p = &self.params;
        let mut d_mem = Array2::zeros((mem_rows, self.config.d_model));
        let mut dx = p.dec_norm.backward(&cache.norm, d_hidden, &mut grads.dec_norm);
        for (i, (layer, c)) in p.decoder.iter().zip(&cache.layers).enumerate().rev() {
            let g = &mut grads.decoder[i];
            let dc = layer.ffn.backward(&c.ffn, &dx, &mut g.ffn);
            let dh2 = &dx + &layer.ln_ffn.backward(&c.ln_ffn, &dc, &mut g.ln_ffn);
            let (db, dm) = layer.cross_attn.backward(&c.cross_attn, &dh2, &mut g.cross_attn);
            d_mem += &dm;
            let dh1 = &dh2 + &layer.ln_cross.backward(&c.ln_cross, &db, &mut g.ln_cross);
            let (dq, dkv) = layer.self_attn.backward(&c.self_attn, &dh1, &mut g.self_attn);
            dx = &dh1 + &layer.ln_self.backward(&c.ln_self, &(dq + dkv), &mut g.ln_self);
        }
        Self::embed_backward(&cache.ids, &dx, grads);
        d_mem
    }

    fn ltr_head_forward(&self, hidden: &Array2<f64>) -> (Array2<f64>, HeadCache) {
        match (&self.params.ltr_head, self.config.ltr_head) {
            (Some(head), LtrHead::Untied) => {
                let (y, c) = head.forward(hidden);
                (y, HeadCache::Untied(c))
            }
            _ => (self.params.lm_head.forward(hidden), HeadCache::Tied),
        }
    }

    fn ltr_head_backward(&self, hidden: &Array2<f64>, cache: &HeadCache, d_logits: &Array2<f64>, grads: &mut ModelParams) -> Array2<f64> {
        match cache {
            HeadCache::Untied(c) => {
                let head = self.params.ltr_head.as_ref().expect("untied head present");
                head.backward(c, d_logits, grads.ltr_head.as_mut().expect("untied head gradient"))
            }
            HeadCache::Tied => self.params.lm_head.backward(hidden, d_logits, &mut grads.lm_head),
        }
    }

    fn ltr_memory(&self, enc: &SegmentEncodings, i: usize) -> (Array2<f64>, Vec<bool>) {
        match self.config.ltr_memory {
            LtrMemory::BosOnly => (enc.states[i].slice(s![0..1, ..]).to_owned(), vec![true]),
            LtrMemory::FullSegment => (enc.states[i].clone(), enc.valid[i].clone()),
        }
    }

    fn encode_with_cache(&self, segs: &[Segment], padded_len: usize) -> Result<(SegmentEncodings, Vec<EncoderCache>)> {
        let mut states = Vec::with_capacity(segs.len());
        let mut valid = Vec::with_capacity(segs.len());
        let mut caches = Vec::with_capacity(segs.len());
        for seg in segs {
            let n = seg.framed_tokens.len();
            if n == 0 || n > padded_len {
                return Err(Error::Shape(format!(
                    "segment {} has {n} framed tokens; padded length is {padded_len}",
                    seg.index
                )));
            }
            let mut ids = seg.framed_tokens.clone();
            ids.resize(padded_len, Vocab::PAD);
            let mask: Vec<bool> = (0..padded_len).map(|t| t < n).collect();
            let (out, cache) = self.encoder_forward(&ids, &mask)?;
            states.push(out);
            valid.push(mask);
            caches.push(cache);
        }
        Ok((SegmentEncodings { states, valid }, caches))
    }

    /// Encodes each segment independently, PAD-extending all of them to the
    /// longest framed length in the list.
    pub fn encode_segments(&self, segs: &[Segment]) -> Result<SegmentEncodings> {
        let len = segs.iter().map(|s| s.framed_tokens.len()).max().unwrap_or(0);
        self.encode_padded(segs, len)
    }

    /// Like [`Model::encode_segments`] with an explicit padded length.
    pub fn encode_padded(&self, segs: &[Segment], padded_len: usize) -> Result<SegmentEncodings> {
        Ok(self.encode_with_cache(segs, padded_len)?.0)
    }

    /// Teacher-forced decoding over all segment encodings; one row of vocab
    /// logits per prefix position.
    pub fn generation_forward(&self, enc: &SegmentEncodings, prefix: &[TokenId]) -> Result<(Array2<f64>, ForwardTrace)> {
        check_prefix(prefix)?;
        if enc.is_empty() {
            return Err(Error::Precondition("no segment encodings".into()));
        }
        let (memory, mem_valid, ranges) = enc.memory();
        let cache = self.decoder_forward(prefix, &memory, &mem_valid)?;
        let logits = self.params.lm_head.forward(&cache.hidden);
        let trace = ForwardTrace {
            cross_attention: average_cross_attention(&cache),
            segment_ranges: ranges,
            bos_vectors: enc.bos_vectors(),
        };
        Ok((logits, trace))
    }

    /// Vocabulary logits of the ranking pass, one row per segment.
    pub fn ltr_logits(&self, enc: &SegmentEncodings) -> Result<Array2<f64>> {
        let mut out = Array2::zeros((enc.len(), self.config.vocab_size));
        for i in 0..enc.len() {
            let (memory, valid) = self.ltr_memory(enc, i);
            let cache = self.decoder_forward(&[Vocab::BOS], &memory, &valid)?;
            let (logits, _) = self.ltr_head_forward(&cache.hidden);
            out.row_mut(i).assign(&logits.row(0));
        }
        Ok(out)
    }

    /// Ranking score per segment: the unnormalized `<extra_token>` logit.
    pub fn ltr_forward(&self, enc: &SegmentEncodings) -> Result<Vec<f64>> {
        Ok(self
            .ltr_logits(enc)?
            .column(Vocab::EXTRA as usize)
            .to_vec())
    }

    /// Greedy decoding of `len` tokens (reserved ids are never emitted),
    /// with the attention trace of the decoded sequence.
    pub fn greedy_decode(&self, enc: &SegmentEncodings, len: usize) -> Result<(Vec<TokenId>, ForwardTrace)> {
        let mut prefix = vec![Vocab::BOS];
        let mut out = Vec::with_capacity(len);
        for _ in 0..len.max(1) {
            let (logits, _) = self.generation_forward(enc, &prefix)?;
            let last = logits.row(logits.nrows() - 1);
            let next = last
                .iter()
                .enumerate()
                .skip(Vocab::RESERVED.len())
                .fold((Vocab::UNK as usize, f64::NEG_INFINITY), |best, (j, &v)| {
                    if v > best.1 {
                        (j, v)
                    } else {
                        best
                    }
                })
                .0 as TokenId;
            out.push(next);
            prefix.push(next);
        }
        out.truncate(len);
        prefix.truncate(len.max(1));
        let (_, trace) = self.generation_forward(enc, &prefix)?;
        Ok((out, trace))
    }

    /// Forward-only joint loss for one document.
    pub fn loss(&self, ex: &TrainingExample, lambda: f64, mode: TargetMode) -> Result<ExampleLoss> {
        let enc = self.encode_segments(&ex.segments)?;
        let (prefix, target) = teacher_forcing(&ex.summary)?;
        let (logits, _) = self.generation_forward(&enc, &prefix)?;
        let generation = losses::generation_ce(&logits, &target, Vocab::PAD)?;
        let target = RankingTarget::from_labels(&ex.labels)?;
        let (ranking, ranked) = if target.has_mass() {
            let scores = self.ltr_forward(&enc)?;
            (losses::softmax_ce_listwise(&target, &scores, mode)?, true)
        } else {
            (0.0, false)
        };
        finish_loss(generation, ranking, lambda, ranked)
    }

    /// Joint loss and exact gradients for one document. Both passes
    /// accumulate into the same decoder gradients.
    pub fn loss_and_grad(
        &self,
        ex: &TrainingExample,
        lambda: f64,
        mode: TargetMode,
        objective: Objective,
    ) -> Result<(ExampleLoss, ModelParams)> {
        if ex.labels.len() != ex.segments.len() {
            return Err(Error::Shape(format!(
                "{} labels for {} segments",
                ex.labels.len(),
                ex.segments.len()
            )));
        }
        let padded = ex.segments.iter().map(|s| s.framed_tokens.len()).max().unwrap_or(0);
        let (enc, enc_caches) = self.encode_with_cache(&ex.segments, padded)?;
        if enc.is_empty() {
            return Err(Error::Precondition("document has no segments".into()));
        }
        let mut grads = self.params.zeros_like();
        let mut d_states: Vec<Array2<f64>> = enc.states.iter().map(|s| Array2::zeros(s.raw_dim())).collect();

        // generation pass
        let (prefix, target) = teacher_forcing(&ex.summary)?;
        let (memory, mem_valid, ranges) = enc.memory();
        let gen_cache = self.decoder_forward(&prefix, &memory, &mem_valid)?;
        let logits = self.params.lm_head.forward(&gen_cache.hidden);
        let (generation, d_logits) = losses::generation_ce_grad(&logits, &target, Vocab::PAD)?;
        if !generation.is_finite() {
            return Err(Error::NonFinite { component: "generation" });
        }
        let d_hidden = self.params.lm_head.backward(&gen_cache.hidden, &d_logits, &mut grads.lm_head);
        let d_mem = self.decoder_backward(&gen_cache, &d_hidden, memory.nrows(), &mut grads);
        for (ds, r) in d_states.iter_mut().zip(&ranges) {
            *ds += &d_mem.slice(s![r.clone(), ..]);
        }

        // ranking pass, one decoder step per segment
        let target = RankingTarget::from_labels(&ex.labels)?;
        let (ranking, ranked) = if target.has_mass() {
            let mut runs = Vec::with_capacity(enc.len());
            let mut scores = Vec::with_capacity(enc.len());
            for i in 0..enc.len() {
                let (mem, valid) = self.ltr_memory(&enc, i);
                let cache = self.decoder_forward(&[Vocab::BOS], &mem, &valid)?;
                let (logits, head) = self.ltr_head_forward(&cache.hidden);
                scores.push(logits[[0, Vocab::EXTRA as usize]]);
                runs.push((cache, head, mem.nrows()));
            }
            let ranking = losses::softmax_ce_listwise(&target, &scores, mode)?;
            if !ranking.is_finite() {
                return Err(Error::NonFinite { component: "ranking" });
            }
            if objective == Objective::Joint {
                let d_scores = losses::softmax_ce_grad(&target, &scores, mode)?;
                for (i, ((cache, head, rows), ds)) in runs.iter().zip(d_scores).enumerate() {
                    let mut d_logits = Array2::zeros((1, self.config.vocab_size));
                    d_logits[[0, Vocab::EXTRA as usize]] = lambda * ds;
                    let d_hidden = self.ltr_head_backward(&cache.hidden, head, &d_logits, &mut grads);
                    let d_mem = self.decoder_backward(cache, &d_hidden, *rows, &mut grads);
                    let mut dst = d_states[i].slice_mut(s![0..*rows, ..]);
                    dst += &d_mem;
                }
            }
            (ranking, true)
        } else {
            (0.0, false)
        };

        for (cache, ds) in enc_caches.iter().zip(&d_states) {
            self.encoder_backward(cache, ds, &mut grads);
        }
        Ok((finish_loss(generation, ranking, lambda, ranked)?, grads))
    }
}

fn finish_loss(generation: f64, ranking: f64, lambda: f64, ranked: bool) -> Result<ExampleLoss> {
    if !generation.is_finite() {
        return Err(Error::NonFinite { component: "generation" });
    }
    if !ranking.is_finite() {
        return Err(Error::NonFinite { component: "ranking" });
    }
    let joint = losses::joint_loss(generation, ranking, &losses::JointLossConfig { lambda });
    Ok(ExampleLoss {
        generation,
        ranking,
        joint,
        ranked,
    })
}

fn check_prefix(prefix: &[TokenId]) -> Result<()> {
    match prefix.first() {
        None => Err(Error::Precondition("empty decoder prefix".into())),
        Some(&t) if t != Vocab::BOS => Err(Error::Precondition("decoder prefix must start with <s>".into())),
        _ => Ok(()),
    }
}

/// `[BOS, s0, .., s(n-2)]` as input and `[s0, .., s(n-1)]` as target.
pub(crate) fn teacher_forcing(summary: &[TokenId]) -> Result<(Vec<TokenId>, Vec<TokenId>)> {
    if summary.is_empty() {
        return Err(Error::Precondition("empty reference summary".into()));
    }
    let mut prefix = Vec::with_capacity(summary.len());
    prefix.push(Vocab::BOS);
    prefix.extend_from_slice(&summary[..summary.len() - 1]);
    Ok((prefix, summary.to_vec()))
}

fn average_cross_attention(cache: &DecoderCache) -> Array2<f64> {
    let first = &cache.layers[0].cross_attn.probs[0];
    let mut avg = Array2::zeros(first.raw_dim());
    let mut count = 0usize;
    for layer in &cache.layers {
        for p in &layer.cross_attn.probs {
            avg += p;
            count += 1;
        }
    }
    avg / count as f64
}
