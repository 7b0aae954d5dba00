use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::layers::{uniform, Attention, FeedForward, LayerNorm, Linear};
use super::tensors::{impl_tensors, Tensors};
use super::{LtrHead, ModelConfig};

const INIT_SCALE: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderLayer {
    pub ln_attn: LayerNorm,
    pub attn: Attention,
    pub ln_ffn: LayerNorm,
    pub ffn: FeedForward,
}
impl_tensors!(EncoderLayer { ln_attn, attn, ln_ffn, ffn });

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderLayer {
    pub ln_self: LayerNorm,
    pub self_attn: Attention,
    pub ln_cross: LayerNorm,
    pub cross_attn: Attention,
    pub ln_ffn: LayerNorm,
    pub ffn: FeedForward,
}
impl_tensors!(DecoderLayer { ln_self, self_attn, ln_cross, cross_attn, ln_ffn, ffn });

/// Every trainable tensor. There is exactly one decoder; both the generation
/// pass and the ranking pass read it.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub tok_emb: Array2<f64>,
    pub pos_emb: Array2<f64>,
    pub encoder: Vec<EncoderLayer>,
    pub enc_norm: LayerNorm,
    pub decoder: Vec<DecoderLayer>,
    pub dec_norm: LayerNorm,
    pub lm_head: Linear,
    pub ltr_head: Option<FeedForward>,
}
impl_tensors!(ModelParams { tok_emb, pos_emb, encoder, enc_norm, decoder, dec_norm, lm_head, ltr_head });

impl ModelParams {
    /// Uniform(-0.1, 0.1) weights, zero biases, unit layer-norm gains.
    pub fn init(cfg: &ModelConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let (d, v, f) = (cfg.d_model, cfg.vocab_size, cfg.ffn_hidden());
        let tok_emb = uniform(&mut rng, v, d, INIT_SCALE);
        let pos_emb = uniform(&mut rng, cfg.max_positions, d, INIT_SCALE);
        let encoder = (0..cfg.n_layers)
            .map(|_| EncoderLayer {
                ln_attn: LayerNorm::new(d),
                attn: Attention::init(&mut rng, d, INIT_SCALE),
                ln_ffn: LayerNorm::new(d),
                ffn: FeedForward::init(&mut rng, d, f, d, INIT_SCALE),
            })
            .collect();
        let decoder = (0..cfg.n_layers)
            .map(|_| DecoderLayer {
                ln_self: LayerNorm::new(d),
                self_attn: Attention::init(&mut rng, d, INIT_SCALE),
                ln_cross: LayerNorm::new(d),
                cross_attn: Attention::init(&mut rng, d, INIT_SCALE),
                ln_ffn: LayerNorm::new(d),
                ffn: FeedForward::init(&mut rng, d, f, d, INIT_SCALE),
            })
            .collect();
        let lm_head = Linear::init(&mut rng, d, v, INIT_SCALE);
        let ltr_head = match cfg.ltr_head {
            LtrHead::Tied => None,
            LtrHead::Untied => Some(FeedForward::init(&mut rng, d, d, v, INIT_SCALE)),
        };
        ModelParams {
            tok_emb,
            pos_emb,
            encoder,
            enc_norm: LayerNorm::new(d),
            decoder,
            dec_norm: LayerNorm::new(d),
            lm_head,
            ltr_head,
        }
    }

    /// Same shapes, all zeros. Used as a gradient accumulator.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.data.fill(0.0);
        }
        z
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.data.len()).sum()
    }

    pub fn add_assign(&mut self, other: &ModelParams) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (x, y) in a.data.iter_mut().zip(b.data) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for t in self.tensors_mut() {
            t.data.iter_mut().for_each(|x| *x *= factor);
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|t| t.data.iter())
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|t| t.data.iter().all(|x| x.is_finite()))
    }
}
