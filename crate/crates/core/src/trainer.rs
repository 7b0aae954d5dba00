//! Joint training loop: segmentation and labeling once up front, then seeded
//! shuffled mini-batches of `generation + lambda * listwise` updates.

use std::path::PathBuf;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{Corpus, Document};
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalConfig, EvalReport};
use crate::labeling::{label_corpus, DEFAULT_THRESHOLD};
use crate::losses::TargetMode;
use crate::nn::{save_checkpoint, Checkpoint, Model, ModelConfig, ModelParams, Objective, OptimizerState, Tensors, TrainState, TrainingExample};
use crate::par;
use crate::segmenter::SegmentationConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    #[default]
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lambda: f64,
    pub threshold: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub optimizer: OptimizerKind,
    /// Global gradient-norm clip; 0 disables clipping.
    pub clip_norm: f64,
    /// Evaluate held-out nDCG every this many epochs; 0 disables.
    pub eval_every: usize,
    pub eval_k: usize,
    pub holdout_fraction: f64,
    pub target_mode: TargetMode,
    /// Threads for per-document gradients. Results do not depend on it.
    pub workers: usize,
    pub segmentation: SegmentationConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda: 1.0,
            threshold: DEFAULT_THRESHOLD,
            learning_rate: 3e-3,
            epochs: 30,
            batch_size: 4,
            seed: 1,
            optimizer: OptimizerKind::Adam,
            clip_norm: 1.0,
            eval_every: 1,
            eval_k: 5,
            holdout_fraction: 0.2,
            target_mode: TargetMode::Normalized,
            workers: 1,
            segmentation: SegmentationConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if self.epochs == 0 {
            return fail("epochs must be at least 1".into());
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return fail(format!("lambda must be finite and non-negative, got {}", self.lambda));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return fail(format!("threshold must lie in [0, 1], got {}", self.threshold));
        }
        if self.batch_size == 0 {
            return fail("batch_size must be at least 1".into());
        }
        if self.clip_norm.is_nan() || self.clip_norm < 0.0 {
            return fail("clip_norm must be non-negative".into());
        }
        if !(0.0..1.0).contains(&self.holdout_fraction) {
            return fail("holdout_fraction must lie in [0, 1)".into());
        }
        if self.eval_k == 0 {
            return fail("eval_k must be at least 1".into());
        }
        self.segmentation.validate()
    }
}

/// One line of the metrics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub steps: u64,
    pub generation_loss: f64,
    pub ranking_loss: f64,
    pub joint_loss: f64,
    pub heldout_ndcg_ltr: Option<f64>,
    pub heldout_ndcg_attention: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub generation_loss: f64,
    pub ranking_loss: f64,
    pub joint_loss: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    pub steps: Vec<StepRecord>,
    pub wall_time_secs: f64,
}

impl TrainReport {
    /// JSONL metrics log, one record per epoch. Wall time is left out so
    /// identical runs give identical logs.
    pub fn metrics_jsonl(&self) -> String {
        self.epochs
            .iter()
            .map(|r| serde_json::to_string(r).expect("record serializes") + "\n")
            .collect()
    }
}

fn doc_hash(doc_id: &str) -> [u8; 32] {
    Sha256::digest(doc_id.as_bytes()).into()
}

/// Deterministic split: the `fraction` of documents with the smallest
/// SHA-256 of their id are held out. Returns (train, held-out) indices in
/// corpus order.
pub fn split_holdout(docs: &[Document], fraction: f64) -> (Vec<usize>, Vec<usize>) {
    let n_hold = (docs.len() as f64 * fraction).floor() as usize;
    let mut by_hash: Vec<usize> = (0..docs.len()).collect();
    by_hash.sort_by_key(|&i| (doc_hash(&docs[i].doc_id), i));
    let mut held: Vec<usize> = by_hash[..n_hold].to_vec();
    held.sort_unstable();
    let train = (0..docs.len()).filter(|i| held.binary_search(i).is_err()).collect();
    (train, held)
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

fn apply_update(params: &mut ModelParams, grads: &ModelParams, opt: &mut OptimizerState, lr: f64) {
    match opt {
        OptimizerState::Sgd => {
            for (p, g) in params.tensors_mut().into_iter().zip(grads.tensors()) {
                for (x, d) in p.data.iter_mut().zip(g.data) {
                    *x -= lr * d;
                }
            }
        }
        OptimizerState::Adam { t, m, v } => {
            *t += 1;
            let bc1 = 1.0 - ADAM_BETA1.powi(*t as i32);
            let bc2 = 1.0 - ADAM_BETA2.powi(*t as i32);
            let params = params.tensors_mut();
            let moments = m.tensors_mut().into_iter().zip(v.tensors_mut());
            for ((p, g), (m, v)) in params.into_iter().zip(grads.tensors()).zip(moments) {
                for i in 0..p.data.len() {
                    let d = g.data[i];
                    m.data[i] = ADAM_BETA1 * m.data[i] + (1.0 - ADAM_BETA1) * d;
                    v.data[i] = ADAM_BETA2 * v.data[i] + (1.0 - ADAM_BETA2) * d * d;
                    let mh = m.data[i] / bc1;
                    let vh = v.data[i] / bc2;
                    p.data[i] -= lr * mh / (vh.sqrt() + ADAM_EPS);
                }
            }
        }
    }
}

fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64 + 1);
    rng
}

/// Resumable training state over one corpus.
pub struct Trainer<'a> {
    corpus: &'a Corpus,
    cfg: TrainConfig,
    objective: Objective,
    model: Model,
    optimizer: OptimizerState,
    epochs_done: usize,
    steps: u64,
    examples: Vec<TrainingExample>,
    heldout: Vec<Document>,
    report: TrainReport,
    checkpoint_path: Option<PathBuf>,
    last_good: Option<PathBuf>,
}

impl<'a> Trainer<'a> {
    pub fn new(corpus: &'a Corpus, model_cfg: ModelConfig, cfg: TrainConfig) -> Result<Self> {
        let mut model_cfg = model_cfg;
        if model_cfg.vocab_size == 0 {
            model_cfg.vocab_size = corpus.vocab.len();
        }
        let model = Model::new(model_cfg)?;
        let optimizer = match cfg.optimizer {
            OptimizerKind::Sgd => OptimizerState::Sgd,
            OptimizerKind::Adam => OptimizerState::Adam {
                t: 0,
                m: model.params.zeros_like(),
                v: model.params.zeros_like(),
            },
        };
        Self::build(corpus, model, cfg, optimizer, 0, 0)
    }

    /// Continues from a checkpoint written by [`Trainer::checkpoint`].
    pub fn resume(corpus: &'a Corpus, ckpt: Checkpoint, cfg: TrainConfig) -> Result<Self> {
        if ckpt.vocab != corpus.vocab {
            return Err(Error::VocabMismatch(
                "checkpoint vocabulary differs from the training corpus".into(),
            ));
        }
        let state = ckpt.train_state.ok_or_else(|| {
            Error::Validation("checkpoint carries no training state to resume from".into())
        })?;
        let kind = match state.optimizer {
            OptimizerState::Sgd => OptimizerKind::Sgd,
            OptimizerState::Adam { .. } => OptimizerKind::Adam,
        };
        if kind != cfg.optimizer {
            return Err(Error::Config("optimizer differs from the checkpoint".into()));
        }
        Self::build(corpus, ckpt.model, cfg, state.optimizer, state.epochs_done, state.steps)
    }

    fn build(
        corpus: &'a Corpus,
        model: Model,
        cfg: TrainConfig,
        optimizer: OptimizerState,
        epochs_done: usize,
        steps: u64,
    ) -> Result<Self> {
        cfg.validate()?;
        if corpus.docs.is_empty() {
            return Err(Error::Validation("training corpus is empty".into()));
        }
        if model.config.vocab_size != corpus.vocab.len() {
            return Err(Error::VocabMismatch(format!(
                "model vocabulary {} vs corpus vocabulary {}",
                model.config.vocab_size,
                corpus.vocab.len()
            )));
        }
        let needed = cfg.segmentation.max_framed_len();
        if model.config.max_positions < needed {
            return Err(Error::Config(format!(
                "max_positions {} is shorter than the longest framed segment ({needed})",
                model.config.max_positions
            )));
        }
        for d in &corpus.docs {
            match &d.reference_summary {
                None => {
                    return Err(Error::Validation(format!(
                        "document {} has no reference summary",
                        d.doc_id
                    )))
                }
                Some(s) if s.is_empty() || s.len() > model.config.max_positions => {
                    return Err(Error::Validation(format!(
                        "document {} has a summary of {} tokens (allowed 1..={})",
                        d.doc_id,
                        s.len(),
                        model.config.max_positions
                    )))
                }
                _ => {}
            }
        }

        let (train_idx, held_idx) = split_holdout(&corpus.docs, cfg.holdout_fraction);
        let train_docs: Vec<Document> = train_idx.iter().map(|&i| corpus.docs[i].clone()).collect();
        let labeled = label_corpus(&train_docs, &cfg.segmentation, cfg.threshold, cfg.workers > 1)?;
        let examples = train_docs
            .iter()
            .zip(labeled.docs)
            .map(|(d, l)| TrainingExample {
                segments: l.segments,
                summary: d.reference_summary.clone().unwrap_or_default(),
                labels: l.labels.labels,
            })
            .collect();
        let heldout = held_idx.iter().map(|&i| corpus.docs[i].clone()).collect();
        Ok(Trainer {
            corpus,
            cfg,
            objective: Objective::Joint,
            model,
            optimizer,
            epochs_done,
            steps,
            examples,
            heldout,
            report: TrainReport::default(),
            checkpoint_path: None,
            last_good: None,
        })
    }

    /// Differentiate only the generation loss (ranking loss is still logged).
    pub fn with_objective(mut self, objective: Objective) -> Self {
        self.objective = objective;
        self
    }

    /// Save a checkpoint to `path` after every epoch.
    pub fn with_checkpoint_path(mut self, path: PathBuf) -> Self {
        self.checkpoint_path = Some(path);
        self
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn report(&self) -> &TrainReport {
        &self.report
    }

    pub fn epochs_done(&self) -> usize {
        self.epochs_done
    }

    pub fn heldout(&self) -> &[Document] {
        &self.heldout
    }

    pub fn train_len(&self) -> usize {
        self.examples.len()
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            model: self.model.clone(),
            vocab: self.corpus.vocab.clone(),
            train_state: Some(TrainState {
                epochs_done: self.epochs_done,
                steps: self.steps,
                optimizer: self.optimizer.clone(),
            }),
        }
    }

    pub fn eval_config(&self) -> EvalConfig {
        EvalConfig {
            segmentation: self.cfg.segmentation,
            threshold: self.cfg.threshold,
            k: self.cfg.eval_k,
            parallel: self.cfg.workers > 1,
        }
    }

    fn step(&mut self, batch: &[usize]) -> Result<StepRecord> {
        let lambda = self.cfg.lambda;
        let mode = self.cfg.target_mode;
        let objective = self.objective;
        let model = &self.model;
        let examples = &self.examples;
        let results = par::map_ordered(batch, self.cfg.workers > 1, |&i| {
            model.loss_and_grad(&examples[i], lambda, mode, objective)
        });
        let mut grads = model.params.zeros_like();
        let (mut gen, mut rank, mut joint) = (0.0, 0.0, 0.0);
        for r in results {
            let (loss, g) = r?;
            gen += loss.generation;
            rank += loss.ranking;
            joint += loss.joint;
            grads.add_assign(&g);
        }
        let n = batch.len() as f64;
        grads.scale(1.0 / n);
        if self.cfg.clip_norm > 0.0 {
            let norm = grads.global_norm();
            if norm > self.cfg.clip_norm {
                grads.scale(self.cfg.clip_norm / norm);
            }
        }
        apply_update(&mut self.model.params, &grads, &mut self.optimizer, self.cfg.learning_rate);
        if !self.model.params.all_finite() {
            return Err(Error::NonFinite { component: "parameter" });
        }
        self.steps += 1;
        Ok(StepRecord {
            step: self.steps,
            generation_loss: gen / n,
            ranking_loss: rank / n,
            joint_loss: joint / n,
        })
    }

    fn run_epoch(&mut self) -> Result<EpochRecord> {
        let epoch = self.epochs_done + 1;
        let mut order: Vec<usize> = (0..self.examples.len()).collect();
        order.shuffle(&mut epoch_rng(self.cfg.seed, epoch));
        let (mut gen, mut rank, mut joint) = (0.0, 0.0, 0.0);
        let steps_before = self.steps;
        for batch in order.chunks(self.cfg.batch_size) {
            let rec = self.step(batch)?;
            let w = batch.len() as f64;
            gen += rec.generation_loss * w;
            rank += rec.ranking_loss * w;
            joint += rec.joint_loss * w;
            self.report.steps.push(rec);
        }
        let n = order.len() as f64;
        self.epochs_done = epoch;

        let (mut ndcg_ltr, mut ndcg_att) = (None, None);
        let due = self.cfg.eval_every > 0 && (epoch.is_multiple_of(self.cfg.eval_every) || epoch == self.cfg.epochs);
        if due && !self.heldout.is_empty() {
            let report = evaluate(&self.model, &self.heldout, &self.eval_config())?;
            ndcg_ltr = report.mean_ndcg_ltr;
            ndcg_att = report.mean_ndcg_attention;
        }
        Ok(EpochRecord {
            epoch,
            steps: self.steps - steps_before,
            generation_loss: gen / n,
            ranking_loss: rank / n,
            joint_loss: joint / n,
            heldout_ndcg_ltr: ndcg_ltr,
            heldout_ndcg_attention: ndcg_att,
        })
    }

    /// Trains until `cfg.epochs` epochs are done in total.
    pub fn run(&mut self) -> Result<&TrainReport> {
        let start = Instant::now();
        while self.epochs_done < self.cfg.epochs {
            let rec = self.run_epoch().map_err(|e| match e {
                Error::NonFinite { .. } => Error::Diverged {
                    epoch: self.epochs_done + 1,
                    last_good: self.last_good.clone(),
                },
                e => e,
            })?;
            self.report.epochs.push(rec);
            if let Some(path) = &self.checkpoint_path {
                save_checkpoint(path, &self.checkpoint())?;
                self.last_good = Some(path.clone());
            }
        }
        self.report.wall_time_secs += start.elapsed().as_secs_f64();
        Ok(&self.report)
    }

    pub fn into_parts(self) -> (Model, TrainReport) {
        (self.model, self.report)
    }
}

/// Trains a fresh model on `corpus`.
pub fn train(corpus: &Corpus, model_cfg: ModelConfig, cfg: TrainConfig) -> Result<(Model, TrainReport)> {
    let workers = cfg.workers;
    let mut trainer = Trainer::new(corpus, model_cfg, cfg)?;
    par::with_workers(workers, || trainer.run().map(|_| ()))?;
    Ok(trainer.into_parts())
}

/// Evaluates a checkpoint on documents tokenized with its vocabulary.
pub fn evaluate_checkpoint(ckpt: &Checkpoint, docs: &[Document], cfg: &EvalConfig) -> Result<EvalReport> {
    evaluate(&ckpt.model, docs, cfg)
}
