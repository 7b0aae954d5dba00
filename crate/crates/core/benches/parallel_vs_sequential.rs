//! Sequential against data-parallel execution of the per-document hot
//! paths: batch gradients, labeling and evaluation.
//!
//! `cargo bench -p ltrsum`. Building with `--no-default-features` makes the
//! parallel variant fall back to sequential code.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use ltrsum::corpus::{generate_synthetic, Corpus, SynthConfig};
use ltrsum::eval::{evaluate, EvalConfig};
use ltrsum::labeling::{label_corpus, DEFAULT_THRESHOLD};
use ltrsum::losses::TargetMode;
use ltrsum::nn::{Model, ModelConfig, Objective, TrainingExample};
use ltrsum::par::map_ordered;
use ltrsum::segmenter::SegmentationConfig;

fn corpus(n: usize) -> Corpus {
    generate_synthetic(1, n, &SynthConfig::default()).unwrap()
}

fn model(c: &Corpus) -> Model {
    Model::new(ModelConfig {
        vocab_size: c.vocab.len(),
        ..ModelConfig::default()
    })
    .unwrap()
}

fn modes() -> [(&'static str, bool); 2] {
    [("sequential", false), ("parallel", true)]
}

fn batch_gradients(c: &mut Criterion) {
    let corpus = corpus(16);
    let model = model(&corpus);
    let labeled = label_corpus(&corpus.docs, &SegmentationConfig::default(), DEFAULT_THRESHOLD, false).unwrap();
    let examples: Vec<TrainingExample> = corpus
        .docs
        .iter()
        .zip(labeled.docs)
        .map(|(d, l)| TrainingExample {
            segments: l.segments,
            summary: d.reference_summary.clone().unwrap(),
            labels: l.labels.labels,
        })
        .collect();
    let mut group = c.benchmark_group("batch_gradients");
    group.sample_size(10);
    for (name, parallel) in modes() {
        group.bench_function(BenchmarkId::new(name, examples.len()), |b| {
            b.iter(|| {
                map_ordered(&examples, parallel, |ex| {
                    model
                        .loss_and_grad(ex, 1.0, TargetMode::Normalized, Objective::Joint)
                        .unwrap()
                })
            })
        });
    }
    group.finish();
}

fn labeling(c: &mut Criterion) {
    let corpus = corpus(256);
    let cfg = SegmentationConfig::default();
    let mut group = c.benchmark_group("labeling");
    for (name, parallel) in modes() {
        group.bench_function(BenchmarkId::new(name, corpus.docs.len()), |b| {
            b.iter(|| label_corpus(&corpus.docs, &cfg, DEFAULT_THRESHOLD, parallel).unwrap())
        });
    }
    group.finish();
}

fn evaluation(c: &mut Criterion) {
    let corpus = corpus(16);
    let model = model(&corpus);
    let mut group = c.benchmark_group("evaluation");
    group.sample_size(10);
    for (name, parallel) in modes() {
        let cfg = EvalConfig {
            parallel,
            ..EvalConfig::default()
        };
        group.bench_function(BenchmarkId::new(name, corpus.docs.len()), |b| {
            b.iter(|| evaluate(&model, &corpus.docs, &cfg).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, batch_gradients, labeling, evaluation);
criterion_main!(benches);
