//! `ltrsum` command line: `synth`, `segment`, `label`, `train`, `rank`,
//! `eval`.
//!
//! Exit codes: 0 on success, 1 on invalid input or usage, 2 on runtime
//! failure. Data goes to files or stdout, diagnostics to stderr.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::corpus::{generate_synthetic, load_corpus, load_corpus_with_vocab, SynthConfig};
use crate::error::{Error, Result};
use crate::eval::{attention_mass, EvalConfig, RankedList};
use crate::labeling::label_corpus;
use crate::nn::{load_checkpoint, save_checkpoint, Checkpoint, ModelConfig, Objective};
use crate::par;
use crate::segmenter::{segment_document, SegmentationConfig};
use crate::trainer::{evaluate_checkpoint, TrainConfig, Trainer};

#[derive(Debug, Parser)]
#[command(name = "ltrsum", version, about = "Query-focused summarization with a learning-to-rank auxiliary objective")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic corpus with planted gold regions.
    Synth(SynthArgs),
    /// Emit one JSONL record per query-framed segment.
    Segment(SegmentArgs),
    /// Emit per-segment relevance scores and graded labels.
    Label(LabelArgs),
    /// Jointly train generation and segment ranking.
    Train(TrainArgs),
    /// Rank each document's segments with a trained model.
    Rank(RankArgs),
    /// nDCG@k for both ranking sources and ROUGE of greedy decodes.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value_t = 80)]
    pub docs: usize,
    #[arg(long)]
    pub out: PathBuf,
    /// Source tokens per document [default: 240].
    #[arg(long)]
    pub doc_len: Option<usize>,
    /// Planted gold regions per document [default: 2].
    #[arg(long)]
    pub gold: Option<usize>,
    /// Words in the generated vocabulary [default: 160].
    #[arg(long)]
    pub vocab_size: Option<usize>,
}

#[derive(Debug, Args, Clone)]
pub struct SegmentFlags {
    /// Key-value (TOML) config file; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Source tokens per window [default: 48].
    #[arg(long)]
    pub window: Option<usize>,
    /// Tokens between window starts [default: 24].
    #[arg(long)]
    pub stride: Option<usize>,
    /// Windows kept per document [default: 16].
    #[arg(long)]
    pub max_segments: Option<usize>,
    /// Query tokens kept before framing [default: 16].
    #[arg(long)]
    pub max_query_len: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SegmentArgs {
    /// Corpus JSONL.
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Output file; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub seg: SegmentFlags,
}

#[derive(Debug, Args)]
pub struct LabelArgs {
    /// Corpus JSONL.
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Output file; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Alignment probability a span must exceed to count [default: 0.4].
    #[arg(long)]
    pub threshold: Option<f64>,
    #[command(flatten)]
    pub seg: SegmentFlags,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Corpus JSONL.
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Checkpoint written after every epoch and at the end.
    #[arg(long)]
    pub out: PathBuf,
    /// Metrics log (JSONL, one record per epoch); stdout when absent.
    #[arg(long)]
    pub metrics: Option<PathBuf>,
    /// Weight of the ranking loss [default: 1].
    #[arg(long, allow_hyphen_values = true)]
    pub lambda: Option<f64>,
    /// Alignment probability a span must exceed to count [default: 0.4].
    #[arg(long)]
    pub threshold: Option<f64>,
    /// [default: 30]
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Seeds both initialization and batch shuffling [default: 1].
    #[arg(long)]
    pub seed: Option<u64>,
    /// [default: 0.003]
    #[arg(long)]
    pub lr: Option<f64>,
    /// [default: 4]
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Worker threads; results do not depend on it [default: 1].
    #[arg(long)]
    pub workers: Option<usize>,
    /// Differentiate only the generation loss.
    #[arg(long)]
    pub generation_only: bool,
    /// Continue from a checkpoint written by a previous run.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[command(flatten)]
    pub seg: SegmentFlags,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RankSource {
    Ltr,
    Attention,
}

#[derive(Debug, Args)]
pub struct RankArgs {
    /// Corpus JSONL.
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Checkpoint written by `train`.
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, value_enum, default_value_t = RankSource::Ltr)]
    pub source: RankSource,
    /// Output file; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub seg: SegmentFlags,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Corpus JSONL.
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Checkpoint written by `train`.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// nDCG cutoff, clamped to the segment count.
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    /// Alignment probability a span must exceed to count [default: 0.4].
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Worker threads; results do not depend on it [default: 1].
    #[arg(long)]
    pub workers: Option<usize>,
    /// Output file; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub seg: SegmentFlags,
}

/// Contents of a `--config` file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

fn file_config(flags: &SegmentFlags) -> Result<FileConfig> {
    flags.config.as_deref().map_or_else(|| Ok(FileConfig::default()), FileConfig::load)
}

fn segmentation(flags: &SegmentFlags, base: SegmentationConfig) -> Result<SegmentationConfig> {
    let cfg = SegmentationConfig {
        window_len: flags.window.unwrap_or(base.window_len),
        stride: flags.stride.unwrap_or(base.stride),
        max_segments: flags.max_segments.unwrap_or(base.max_segments),
        max_query_len: flags.max_query_len.unwrap_or(base.max_query_len),
    };
    cfg.validate()?;
    Ok(cfg)
}

/// Writes to `path`, or to `stdout` when no path is given.
fn emit(path: Option<&Path>, stdout: &mut dyn Write, data: &str) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, data).map_err(|e| Error::io(p, e)),
        None => stdout
            .write_all(data.as_bytes())
            .map_err(|e| Error::io("<stdout>", e)),
    }
}

fn jsonl<T: Serialize>(records: impl IntoIterator<Item = T>) -> String {
    records
        .into_iter()
        .map(|r| serde_json::to_string(&r).expect("record serializes") + "\n")
        .collect()
}

#[derive(Serialize)]
struct SegmentRecord<'a> {
    doc_id: &'a str,
    index: usize,
    start: usize,
    end: usize,
    framed_len: usize,
}

#[derive(Serialize)]
struct LabelRecord<'a> {
    doc_id: &'a str,
    scores: &'a [f64],
    labels: &'a [u32],
    threshold: f64,
}

#[derive(Serialize)]
/// `scores` is indexed by segment; `order` lists segment indices best first.
struct RankRecord<'a> {
    doc_id: &'a str,
    source: &'static str,
    order: &'a [usize],
    scores: &'a [f64],
}

fn cmd_synth(a: &SynthArgs, err: &mut dyn Write) -> Result<()> {
    let d = SynthConfig::default();
    let cfg = SynthConfig {
        doc_len: a.doc_len.unwrap_or(d.doc_len),
        n_gold: a.gold.unwrap_or(d.n_gold),
        vocab_size: a.vocab_size.unwrap_or(d.vocab_size),
        ..d
    };
    let corpus = generate_synthetic(a.seed, a.docs, &cfg)?;
    corpus.write_jsonl(&a.out)?;
    let _ = writeln!(err, "wrote {} documents to {}", corpus.docs.len(), a.out.display());
    Ok(())
}

fn cmd_segment(a: &SegmentArgs, out: &mut dyn Write) -> Result<()> {
    let cfg = segmentation(&a.seg, file_config(&a.seg)?.train.segmentation)?;
    let corpus = load_corpus(&a.input)?;
    let mut text = String::new();
    for doc in &corpus.docs {
        let segs = segment_document(doc, &cfg)?;
        text.push_str(&jsonl(segs.iter().map(|s| SegmentRecord {
            doc_id: &doc.doc_id,
            index: s.index,
            start: s.source_start,
            end: s.source_end,
            framed_len: s.framed_tokens.len(),
        })));
    }
    emit(a.out.as_deref(), out, &text)
}

fn cmd_label(a: &LabelArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    let file = file_config(&a.seg)?;
    let cfg = segmentation(&a.seg, file.train.segmentation)?;
    let threshold = a.threshold.unwrap_or(file.train.threshold);
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::Config(format!("threshold must lie in [0, 1], got {threshold}")));
    }
    let corpus = load_corpus(&a.input)?;
    let labeled = label_corpus(&corpus.docs, &cfg, threshold, false)?;
    if labeled.missing_alignment_docs > 0 {
        let _ = writeln!(
            err,
            "warning: {} documents have no alignments; their labels are all zero",
            labeled.missing_alignment_docs
        );
    }
    let text = jsonl(corpus.docs.iter().zip(&labeled.docs).map(|(d, l)| LabelRecord {
        doc_id: &d.doc_id,
        scores: &l.labels.scores,
        labels: &l.labels.labels,
        threshold: l.labels.threshold_used,
    }));
    emit(a.out.as_deref(), out, &text)
}

fn cmd_train(a: &TrainArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    let file = file_config(&a.seg)?;
    let mut train = file.train;
    let mut model = file.model;
    train.segmentation = segmentation(&a.seg, train.segmentation)?;
    if let Some(v) = a.lambda {
        train.lambda = v;
    }
    if let Some(v) = a.threshold {
        train.threshold = v;
    }
    if let Some(v) = a.epochs {
        train.epochs = v;
    }
    if let Some(v) = a.seed {
        train.seed = v;
        model.seed = v;
    }
    if let Some(v) = a.lr {
        train.learning_rate = v;
    }
    if let Some(v) = a.batch_size {
        train.batch_size = v;
    }
    if let Some(v) = a.workers {
        train.workers = v;
    }
    let workers = train.workers;
    let corpus = load_corpus(&a.input)?;
    let trainer = match &a.resume {
        Some(path) => Trainer::resume(&corpus, load_checkpoint(path)?, train)?,
        None => Trainer::new(&corpus, model, train)?,
    };
    let objective = if a.generation_only {
        Objective::GenerationOnly
    } else {
        Objective::Joint
    };
    let mut trainer = trainer
        .with_objective(objective)
        .with_checkpoint_path(a.out.clone());
    let _ = writeln!(
        err,
        "training on {} documents ({} held out), {} parameters",
        trainer.train_len(),
        trainer.heldout().len(),
        trainer.model().params.num_params()
    );
    par::with_workers(workers, || trainer.run().map(|_| ()))?;
    save_checkpoint(&a.out, &trainer.checkpoint())?;
    let report = trainer.report();
    let _ = writeln!(err, "done in {:.1}s", report.wall_time_secs);
    emit(a.metrics.as_deref(), out, &report.metrics_jsonl())
}

fn load_eval_inputs(input: &Path, checkpoint: &Path) -> Result<(Checkpoint, Vec<crate::corpus::Document>)> {
    let ckpt = load_checkpoint(checkpoint)?;
    let docs = load_corpus_with_vocab(input, &ckpt.vocab)?;
    Ok((ckpt, docs))
}

fn cmd_rank(a: &RankArgs, out: &mut dyn Write) -> Result<()> {
    let cfg = segmentation(&a.seg, file_config(&a.seg)?.train.segmentation)?;
    let (ckpt, docs) = load_eval_inputs(&a.input, &a.checkpoint)?;
    let model = &ckpt.model;
    let mut text = String::new();
    for doc in &docs {
        let segs = segment_document(doc, &cfg)?;
        let enc = model.encode_segments(&segs)?;
        let (source, scores) = match a.source {
            RankSource::Ltr => ("ltr", model.ltr_forward(&enc)?),
            RankSource::Attention => {
                let len = doc.reference_summary.as_ref().map_or(8, |s| s.len().max(1));
                let (_, trace) = model.greedy_decode(&enc, len)?;
                ("attention", attention_mass(&trace))
            }
        };
        let ranked = RankedList::from_scores(&scores);
        text.push_str(&jsonl([RankRecord {
            doc_id: &doc.doc_id,
            source,
            order: &ranked.order,
            scores: &scores,
        }]));
    }
    emit(a.out.as_deref(), out, &text)
}

fn cmd_eval(a: &EvalArgs, out: &mut dyn Write) -> Result<()> {
    let file = file_config(&a.seg)?;
    let cfg = EvalConfig {
        segmentation: segmentation(&a.seg, file.train.segmentation)?,
        threshold: a.threshold.unwrap_or(file.train.threshold),
        k: a.k,
        parallel: a.workers.unwrap_or(1) > 1,
    };
    let (ckpt, docs) = load_eval_inputs(&a.input, &a.checkpoint)?;
    let report = par::with_workers(a.workers.unwrap_or(1), || evaluate_checkpoint(&ckpt, &docs, &cfg))?;
    let text = serde_json::to_string_pretty(&report).expect("report serializes") + "\n";
    emit(a.out.as_deref(), out, &text)
}

pub fn exit_code(e: &Error) -> i32 {
    if e.is_validation() {
        1
    } else {
        2
    }
}

/// Parses `args` (program name first) and runs the subcommand.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{e}");
                    0
                }
                _ => {
                    let _ = write!(err, "{}", e.render());
                    1
                }
            };
        }
    };
    let result = match &cli.command {
        Command::Synth(a) => cmd_synth(a, err),
        Command::Segment(a) => cmd_segment(a, out),
        Command::Label(a) => cmd_label(a, out, err),
        Command::Train(a) => cmd_train(a, out, err),
        Command::Rank(a) => cmd_rank(a, out),
        Command::Eval(a) => cmd_eval(a, out),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_file_parses_and_rejects_unknown_keys() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, "[model]\nd_model = 16\n[train]\nlambda = 1.5\n[train.segmentation]\nwindow_len = 20\nstride = 10\n").unwrap();
        let cfg = FileConfig::load(&path).unwrap();
        assert_eq!(cfg.model.d_model, 16);
        assert_eq!(cfg.model.n_heads, 2);
        assert_eq!(cfg.train.lambda, 1.5);
        assert_eq!(cfg.train.segmentation.window_len, 20);
        assert_eq!(cfg.train.threshold, 0.4);
        std::fs::write(&path, "[train]\nlamda = 1.0\n").unwrap();
        assert!(matches!(FileConfig::load(&path), Err(Error::Config(_))));
    }

    #[test]
    fn unknown_flag_exits_one() {
        let (mut out, mut err) = (Vec::new(), Vec::new());
        let code = run(["ltrsum", "segment", "--bogus"], &mut out, &mut err);
        assert_eq!(code, 1);
        assert!(String::from_utf8(err).unwrap().contains("Usage"));
    }

    #[test]
    fn help_exits_zero() {
        let (mut out, mut err) = (Vec::new(), Vec::new());
        assert_eq!(run(["ltrsum", "--help"], &mut out, &mut err), 0);
        assert!(String::from_utf8(out).unwrap().contains("train"));
    }
}
