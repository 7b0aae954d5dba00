//! Acceptance suite. Prints one PASS/FAIL line per criterion and fails if
//! any criterion fails. Run with
//! `cargo test --release -p ltrsum --test acceptance -- --nocapture`.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::Command;
use std::time::{Duration, Instant};

use common::*;
use ltrsum::corpus::{generate_synthetic, Document, SynthConfig, TokenId};
use ltrsum::eval::{dcg, ndcg, ndcg_with_base, rouge, RankedList, RougeVariant};
use ltrsum::labeling::{assign_labels, score_segment};
use ltrsum::losses::{softmax_ce_grad, softmax_ce_listwise, RankingTarget, TargetMode};
use ltrsum::nn::{LtrHead, LtrMemory, Model, ModelConfig, Objective, Tensors};
use ltrsum::segmenter::{segment_document, window_bounds, SegmentationConfig};
use ltrsum::trainer::{train, TrainConfig, Trainer};
use rand::seq::SliceRandom;
use rand::Rng;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn criterion(n: usize, name: &str, budget: Duration, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let result = match catch_unwind(AssertUnwindSafe(f)) {
        Ok(r) => r,
        Err(p) => Err(p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".into())),
    };
    let took = start.elapsed();
    let result = result.and_then(|d| {
        if took <= budget {
            Ok(d)
        } else {
            Err(format!("{d}; over the {:.0?} budget", budget))
        }
    });
    let (tag, detail) = match &result {
        Ok(d) => ("PASS", d),
        Err(d) => ("FAIL", d),
    };
    println!("criterion {n} {tag}: {name} [{took:.2?}] {detail}");
    result.is_ok()
}

fn loss_oracles() -> Outcome {
    let mode = TargetMode::Normalized;
    let t = RankingTarget::new(vec![1.0, 0.0]).unwrap();
    let sym = softmax_ce_listwise(&t, &[0.0, 0.0], mode).unwrap();
    ensure((sym - 2f64.ln()).abs() <= 1e-9, || format!("symmetric case {sym}"))?;
    let margin = softmax_ce_listwise(&t, &[10.0, 0.0], mode).unwrap();
    let want = (-10f64).exp().ln_1p();
    ensure((margin - want).abs() <= 1e-9, || format!("margin case {margin} vs {want}"))?;

    let h = 1e-5;
    let mut r = rng(11);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let m = r.random_range(1..=8);
        let mut y: Vec<f64> = (0..m).map(|_| r.random_range(0.0..3.0)).collect();
        y[r.random_range(0..m)] += 0.5;
        let target = RankingTarget::new(y).unwrap();
        let s: Vec<f64> = (0..m).map(|_| r.random_range(-5.0..5.0)).collect();
        let g = softmax_ce_grad(&target, &s, mode).unwrap();
        for j in 0..m {
            let mut up = s.clone();
            let mut down = s.clone();
            up[j] += h;
            down[j] -= h;
            let fd = (softmax_ce_listwise(&target, &up, mode).unwrap()
                - softmax_ce_listwise(&target, &down, mode).unwrap())
                / (2.0 * h);
            worst = worst.max((fd - g[j]).abs());
        }
    }
    ensure(worst <= 1e-6, || format!("finite-difference gap {worst:.2e}"))?;
    Ok(format!("ln2 {sym:.9}, margin {margin:.4e}, worst fd gap {worst:.1e}"))
}

fn full_model_gradients() -> Outcome {
    let mut worst = 0.0f64;
    let mut worst_name = String::new();
    let variants = [
        (LtrHead::Tied, LtrMemory::BosOnly),
        (LtrHead::Untied, LtrMemory::FullSegment),
    ];
    for (head, memory) in variants {
        let mut model = Model::new(micro_config(head, memory)).unwrap();
        perturb_params(&mut model, 3);
        for lambda in [0.0, 1.0] {
            for c in gradient_check(&model, &micro_example(), lambda, 1e-4) {
                if c.rel_err > worst {
                    worst = c.rel_err;
                    worst_name = format!("{} ({head:?}, {memory:?}, lambda {lambda})", c.name);
                }
            }
        }
    }
    ensure(worst <= 1e-3, || format!("worst relative error {worst:.2e} on {worst_name}"))?;
    Ok(format!("worst relative error {worst:.1e} on {worst_name}"))
}

fn labeling_oracle() -> Outcome {
    let thresholds = [0.0, 0.4, 0.8];
    let mut r = rng(21);
    let mut positives = 0;
    for trial in 0..1000 {
        let threshold = thresholds[trial % 3];
        let doc = random_document(&mut r, &thresholds);
        let w = r.random_range(1..=12);
        let cfg = SegmentationConfig {
            window_len: w,
            stride: r.random_range(1..=w),
            max_segments: 64,
            max_query_len: 16,
        };
        let segs = segment_document(&doc, &cfg).unwrap();
        let spans = doc.alignments.as_deref().unwrap();
        let scores: Vec<f64> = segs.iter().map(|s| score_segment(s, spans, threshold)).collect();
        let oracle: Vec<f64> = segs
            .iter()
            .map(|s| brute_score(s.source_start, s.source_end, spans, threshold))
            .collect();
        for (a, b) in scores.iter().zip(&oracle) {
            ensure((a - b).abs() <= 1e-12, || format!("trial {trial}: score {a} vs oracle {b}"))?;
        }
        let labels = assign_labels(&scores);
        let want = brute_labels(&oracle);
        ensure(labels == want, || format!("trial {trial}: labels {labels:?} vs oracle {want:?}"))?;
        positives += labels.iter().filter(|&&l| l > 0).count();
    }
    Ok(format!("1000 instances agree, {positives} positive labels"))
}

fn metric_oracles() -> Outcome {
    let d = dcg(&[3, 2, 0], 3).unwrap();
    ensure((d - 8.89279).abs() <= 1e-5, || format!("dcg([3,2,0]) = {d}"))?;
    let worst_first = RankedList {
        order: vec![2, 1, 0],
        scores: vec![3.0, 2.0, 1.0],
    };
    let n = ndcg(&worst_first, &[2, 1, 0], 3).unwrap();
    ensure((n - 0.58688).abs() <= 1e-5, || format!("worst-first ndcg {n}"))?;

    let mut r = rng(31);
    let mut swaps = 0;
    for trial in 0..1000 {
        let m = r.random_range(2..=8);
        let mut gold: Vec<u32> = (0..m).map(|_| r.random_range(0..=3)).collect();
        gold[r.random_range(0..m)] = r.random_range(1..=3);
        let mut order: Vec<usize> = (0..m).collect();
        order.shuffle(&mut r);
        let list = |o: &[usize]| RankedList {
            order: o.to_vec(),
            scores: (0..m).rev().map(|s| s as f64).collect(),
        };
        let p = r.random_range(1..=m);
        let before = ndcg(&list(&order), &gold, m).unwrap();
        let oracle = ndcg_oracle(&order, &gold, 2.0);
        ensure((before - oracle).abs() <= 1e-9, || format!("trial {trial}: ndcg {before} vs oracle {oracle}"))?;
        ensure((0.0..=1.0 + 1e-12).contains(&before), || format!("trial {trial}: ndcg {before} out of range"))?;

        for base in [std::f64::consts::E, 10.0] {
            let a = ndcg(&list(&order), &gold, p).unwrap();
            let b = ndcg_with_base(&list(&order), &gold, p, base).unwrap();
            ensure((a - b).abs() <= 1e-9, || format!("trial {trial}: base {base} gives {b} vs {a}"))?;
        }

        let mut ideal = order.clone();
        ideal.sort_by(|&a, &b| gold[b].cmp(&gold[a]));
        let best = ndcg(&list(&ideal), &gold, p).unwrap();
        ensure((best - 1.0).abs() <= 1e-12, || format!("trial {trial}: ideal order gives {best}"))?;

        let inversions: Vec<usize> = (0..m - 1).filter(|&i| gold[order[i]] < gold[order[i + 1]]).collect();
        if let Some(&i) = inversions.get(r.random_range(0..inversions.len().max(1))) {
            let mut fixed = order.clone();
            fixed.swap(i, i + 1);
            for cut in [p, m] {
                let lo = ndcg(&list(&order), &gold, cut).unwrap();
                let hi = ndcg(&list(&fixed), &gold, cut).unwrap();
                ensure(hi >= lo - 1e-12, || format!("trial {trial}: swap lowered ndcg@{cut} {lo} -> {hi}"))?;
            }
            swaps += 1;
        } else {
            ensure((before - 1.0).abs() <= 1e-12, || format!("trial {trial}: sorted order gives {before}"))?;
        }
    }
    Ok(format!("dcg {d:.5}, worst-first {n:.5}, {swaps} swap checks"))
}

fn run_efficacy(lambda: f64) -> (Option<f64>, Option<f64>) {
    let corpus = generate_synthetic(1, 80, &SynthConfig::default()).unwrap();
    let cfg = TrainConfig {
        lambda,
        workers: 1,
        ..TrainConfig::default()
    };
    let (_, report) = train(&corpus, ModelConfig::default(), cfg).unwrap();
    let last = report.epochs.last().unwrap();
    (last.heldout_ndcg_ltr, last.heldout_ndcg_attention)
}

fn efficacy() -> Outcome {
    let (joint_ltr, _) = run_efficacy(1.0);
    let (_, baseline_att) = run_efficacy(0.0);
    let joint_ltr = joint_ltr.ok_or("no held-out LTR nDCG")?;
    let baseline_att = baseline_att.ok_or("no held-out attention nDCG")?;
    let detail = format!("lambda=1 LTR nDCG@5 {joint_ltr:.4}, lambda=0 attention nDCG@5 {baseline_att:.4}");
    ensure(joint_ltr >= 0.90, || format!("{detail}; LTR below 0.90"))?;
    ensure(joint_ltr - baseline_att >= 0.10, || format!("{detail}; margin below 0.10"))?;
    Ok(format!("{detail}, margin {:.4}", joint_ltr - baseline_att))
}

fn lambda_degeneracy() -> Outcome {
    let corpus = generate_synthetic(1, 24, &SynthConfig::default()).unwrap();
    let cfg = TrainConfig {
        lambda: 0.0,
        epochs: 3,
        workers: 1,
        ..TrainConfig::default()
    };
    let run = |objective| {
        let mut t = Trainer::new(&corpus, ModelConfig::default(), cfg.clone())
            .unwrap()
            .with_objective(objective);
        t.run().unwrap();
        let (model, report) = t.into_parts();
        (model, report)
    };
    let (m0, r0) = run(Objective::Joint);
    let (m1, r1) = run(Objective::GenerationOnly);
    ensure(r0.steps == r1.steps, || "step losses differ".into())?;
    ensure(r0.epochs == r1.epochs, || "epoch records differ".into())?;
    for (a, b) in m0.params.tensors().iter().zip(m1.params.tensors()) {
        ensure(a.data == b.data, || format!("parameter {} differs", a.name))?;
    }
    Ok(format!("{} steps and all parameters identical", r0.steps.len()))
}

fn reproducibility() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let bin = env!("CARGO_BIN_EXE_ltrsum");
    let p = |name: &str| dir.path().join(name);
    let status = |cmd: &mut Command| -> Result<(), String> {
        let out = cmd.output().map_err(|e| e.to_string())?;
        ensure(out.status.success(), || String::from_utf8_lossy(&out.stderr).into_owned())
    };
    status(Command::new(bin).args(["synth", "--seed", "5", "--docs", "16", "--out"]).arg(p("c.jsonl")))?;
    for (run, workers) in [("a", "1"), ("b", "1"), ("c", "4")] {
        status(
            Command::new(bin)
                .args(["train", "--epochs", "2", "--seed", "9", "--workers", workers, "--in"])
                .arg(p("c.jsonl"))
                .arg("--out")
                .arg(p(&format!("{run}.ckpt")))
                .arg("--metrics")
                .arg(p(&format!("{run}.jsonl"))),
        )?;
    }
    let read = |name: &str| std::fs::read(p(name)).unwrap();
    ensure(read("a.jsonl") == read("b.jsonl"), || "metrics logs differ".into())?;
    ensure(read("a.ckpt") == read("b.ckpt"), || "checkpoints differ".into())?;
    ensure(read("a.jsonl") == read("c.jsonl"), || "metrics log depends on --workers".into())?;
    ensure(read("a.ckpt") == read("c.ckpt"), || "checkpoint depends on --workers".into())?;
    Ok(format!(
        "logs ({} bytes) and checkpoints ({} bytes) identical, also with 4 workers",
        read("a.jsonl").len(),
        read("a.ckpt").len()
    ))
}

fn segmentation_laws() -> Outcome {
    let want = vec![(0, 4), (2, 6), (4, 8), (6, 10)];
    let got = window_bounds(10, 4, 2);
    ensure(got == want, || format!("worked example gave {got:?}"))?;

    let mut r = rng(41);
    for trial in 0..1000 {
        let len = r.random_range(1..200);
        let w = r.random_range(1..=64);
        let s = r.random_range(1..=w);
        let doc = Document {
            doc_id: "d".into(),
            query: vec![9, 10, 11],
            source: (0..len).map(|i| 5 + (i % 50) as TokenId).collect(),
            reference_summary: None,
            alignments: None,
        };
        let cfg = SegmentationConfig {
            window_len: w,
            stride: s,
            max_segments: usize::MAX,
            max_query_len: 16,
        };
        let segs = segment_document(&doc, &cfg).unwrap();
        let mut covered = vec![false; len];
        for (i, seg) in segs.iter().enumerate() {
            ensure(seg.source_start == i * s, || format!("trial {trial}: segment {i} starts at {}", seg.source_start))?;
            ensure(seg.source_start < seg.source_end && seg.source_end <= len, || format!("trial {trial}: bad bounds"))?;
            ensure(seg.framed_tokens[..5] == [2, 9, 10, 11, 3], || format!("trial {trial}: wrong prefix"))?;
            covered[seg.source_start..seg.source_end].iter_mut().for_each(|c| *c = true);
            if let Some(next) = segs.get(i + 1) {
                let shared = seg.source_end.saturating_sub(next.source_start);
                ensure(shared == w - s, || format!("trial {trial}: segments {i},{} share {shared}", i + 1))?;
            }
        }
        ensure(covered.iter().all(|&c| c), || format!("trial {trial}: coverage gap"))?;
        ensure(segs.last().unwrap().source_end == len, || format!("trial {trial}: last window short of the end"))?;
        let expected = 1 + len.saturating_sub(w).div_ceil(s);
        ensure(segs.len() == expected, || format!("trial {trial}: {} windows, expected {expected}", segs.len()))?;
    }
    Ok("worked example and 1000 random triples".into())
}

fn rouge_sanity() -> Outcome {
    let cand = ["a", "b", "c"];
    let refr = ["a", "x", "c"];
    for v in [RougeVariant::One, RougeVariant::Two, RougeVariant::L] {
        let id = rouge(&cand, &cand, v).unwrap().f1;
        ensure((id - 1.0).abs() <= 1e-12, || format!("{v:?} identity f1 {id}"))?;
    }
    let r1 = rouge(&cand, &refr, RougeVariant::One).unwrap().f1;
    let rl = rouge(&cand, &refr, RougeVariant::L).unwrap().f1;
    ensure((r1 - 2.0 / 3.0).abs() <= 1e-9, || format!("ROUGE-1 f1 {r1}"))?;
    ensure((rl - 2.0 / 3.0).abs() <= 1e-9, || format!("ROUGE-L f1 {rl}"))?;
    Ok(format!("identity 1.0, ROUGE-1 {r1:.9}, ROUGE-L {rl:.9}"))
}

#[test]
fn acceptance() {
    let secs = Duration::from_secs;
    let results = [
        criterion(1, "listwise loss oracles and gradient", secs(1), loss_oracles),
        criterion(2, "full-model gradient check", secs(30), full_model_gradients),
        criterion(3, "labeling against brute force", secs(5), labeling_oracle),
        criterion(4, "ranking metric oracles", secs(5), metric_oracles),
        criterion(5, "joint training efficacy", secs(600), efficacy),
        criterion(6, "lambda = 0 matches generation-only", secs(600), lambda_degeneracy),
        criterion(7, "reproducible train invocations", secs(600), reproducibility),
        criterion(8, "segmentation laws", secs(5), segmentation_laws),
        criterion(9, "ROUGE sanity", secs(5), rouge_sanity),
    ];
    let passed = results.iter().filter(|&&ok| ok).count();
    println!("{passed}/{} criteria passed", results.len());
    assert_eq!(passed, results.len(), "some acceptance criteria failed");
}
