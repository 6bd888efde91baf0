//! Acceptance suite: one test per release criterion, each printing a
//! PASS line (run with `--nocapture` to see them).
//!
//! Expected values are frozen from independent oracles: label-list
//! recounts for the metric checks, central finite differences for the
//! loss gradient, and hand-built confusion matrices for the baselines.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use subjpipe::corpus::{self, CorpusSplit, LabeledSentence, Language, SplitKind, SubjLabel};
use subjpipe::labels::{from_logits, to_sentiment, SentimentClass, SentimentLogits};
use subjpipe::metrics::{confusion, evaluate_files, report, ConfusionMatrix};
use subjpipe::trainer::{
    sample_weight, weighted_loss, weighted_loss_and_grad, Encoder, ReferenceEncoder, TokenBatch,
    TrainConfig, WeightedBatch,
};
use subjpipe::translate::{translate_split, StubBackend, TranslationBackend, TranslationCache};

fn subjpipe() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_subjpipe"));
    cmd.env_remove("SUBJPIPE_MT_KEY");
    cmd.env_remove("SUBJPIPE_MT_URL");
    cmd
}

fn pass(n: usize, name: &str, detail: &str) {
    println!("[acceptance] criterion {n} ({name}): PASS {detail}");
}

// --- criterion 1 -------------------------------------------------------

#[test]
fn criterion_1_distribution_reproduction() {
    // (language, split, obj, subj, printed OBJ cell, printed SUBJ cell)
    let rows: [(&str, &str, usize, usize, &str, &str); 12] = [
        ("ar", "train", 905, 280, "905 (76.37)", "280 (23.63)"),
        ("ar", "test", 425, 323, "425 (56.82)", "323 (43.18)"),
        ("bg", "train", 406, 323, "406 (55.69)", "323 (44.31)"),
        ("bg", "test", 143, 107, "143 (57.20)", "107 (42.80)"),
        ("en", "train", 532, 298, "532 (64.10)", "298 (35.90)"),
        ("en", "test", 362, 122, "362 (74.79)", "122 (25.21)"),
        ("de", "train", 492, 308, "492 (61.50)", "308 (38.50)"),
        ("de", "test", 226, 111, "226 (67.06)", "111 (32.94)"),
        ("it", "train", 1231, 382, "1231 (76.32)", "382 (23.68)"),
        ("it", "test", 377, 136, "377 (73.49)", "136 (26.51)"),
        ("multi", "train", 3568, 1591, "3568 (69.16)", "1591 (30.84)"),
        ("multi", "test", 250, 250, "250 (50.00)", "250 (50.00)"),
    ];

    let dir = tempfile::tempdir().unwrap();
    let mut fixtures = Vec::new();
    for (lang, split, obj, subj, _, _) in &rows {
        let path = dir.path().join(format!("{lang}_{split}.tsv"));
        let mut content = String::new();
        for i in 0..*obj {
            content.push_str(&format!("o{i}\tsome text\tOBJ\n"));
        }
        for i in 0..*subj {
            content.push_str(&format!("s{i}\tsome text\tSUBJ\n"));
        }
        fs::write(&path, content).unwrap();
        fixtures.push(path);
    }

    let started = Instant::now();
    for ((lang, split, obj, subj, obj_cell, subj_cell), path) in rows.iter().zip(&fixtures) {
        let out = subjpipe()
            .args(["stats", "--input", path.to_str().unwrap(), "--lang", lang, "--split", split])
            .output()
            .unwrap();
        assert!(out.status.success(), "stats failed for {lang} {split}");
        let text = String::from_utf8_lossy(&out.stdout).into_owned();
        let total = obj + subj;
        assert!(text.contains(&format!("({total})")), "{lang} {split} total missing:\n{text}");
        assert!(text.contains(obj_cell), "{lang} {split}: expected `{obj_cell}` in:\n{text}");
        assert!(text.contains(subj_cell), "{lang} {split}: expected `{subj_cell}` in:\n{text}");
    }
    let elapsed = started.elapsed();
    assert!(elapsed < Duration::from_secs(1), "took {elapsed:?}, limit 1s");
    pass(1, "distribution reproduction", &format!("12 rows in {elapsed:?}"));
}

// --- criterion 2 -------------------------------------------------------

/// First-principles metric computation from label lists: per class, count
/// predictions, occurrences, and agreements directly, then derive P/R/F1.
fn oracle_metrics(gold: &[SubjLabel], pred: &[SubjLabel]) -> [f64; 7] {
    fn class_prf(gold: &[SubjLabel], pred: &[SubjLabel], class: SubjLabel) -> (f64, f64, f64) {
        let predicted = pred.iter().filter(|&&l| l == class).count();
        let actual = gold.iter().filter(|&&l| l == class).count();
        let correct = gold
            .iter()
            .zip(pred)
            .filter(|(&g, &p)| g == class && p == class)
            .count();
        let p = if predicted == 0 { 0.0 } else { correct as f64 / predicted as f64 };
        let r = if actual == 0 { 0.0 } else { correct as f64 / actual as f64 };
        let f1 = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
        (p, r, f1)
    }
    let (p_s, r_s, f1_s) = class_prf(gold, pred, SubjLabel::Subj);
    let (p_o, r_o, f1_o) = class_prf(gold, pred, SubjLabel::Obj);
    let matches = gold.iter().zip(pred).filter(|(g, p)| g == p).count();
    [
        (f1_s + f1_o) / 2.0,
        (p_s + p_o) / 2.0,
        (r_s + r_o) / 2.0,
        f1_s,
        p_s,
        r_s,
        matches as f64 / gold.len() as f64,
    ]
}

#[test]
fn criterion_2_metric_oracle_equivalence() {
    let started = Instant::now();
    let mut cases = 0usize;
    for tp in 0..=6usize {
        for fp in 0..=6usize {
            for fn_ in 0..=6usize {
                for tn in 0..=6usize {
                    if tp + fp + fn_ + tn == 0 {
                        // no label lists realize the all-zero matrix
                        continue;
                    }
                    let mut gold = Vec::new();
                    let mut pred = Vec::new();
                    gold.extend(std::iter::repeat_n(SubjLabel::Subj, tp + fn_));
                    gold.extend(std::iter::repeat_n(SubjLabel::Obj, fp + tn));
                    pred.extend(std::iter::repeat_n(SubjLabel::Subj, tp));
                    pred.extend(std::iter::repeat_n(SubjLabel::Obj, fn_));
                    pred.extend(std::iter::repeat_n(SubjLabel::Subj, fp));
                    pred.extend(std::iter::repeat_n(SubjLabel::Obj, tn));

                    let cm = confusion(&gold, &pred).unwrap();
                    assert_eq!(
                        cm,
                        ConfusionMatrix { tp_subj: tp, fp_subj: fp, fn_subj: fn_, tn_subj: tn }
                    );
                    let got = report(&cm).values();
                    let want = oracle_metrics(&gold, &pred);
                    for (i, (g, w)) in got.iter().zip(&want).enumerate() {
                        assert!(
                            (g - w).abs() <= 1e-12,
                            "cells ({tp},{fp},{fn_},{tn}) metric {i}: {g} vs oracle {w}"
                        );
                    }
                    cases += 1;
                }
            }
        }
    }
    assert_eq!(cases, 2400);
    // the all-zero matrix stays total under the zero conventions
    let zero = report(&ConfusionMatrix::default());
    assert!(zero.values().iter().all(|v| *v == 0.0));
    let elapsed = started.elapsed();
    assert!(elapsed < Duration::from_secs(5), "took {elapsed:?}, limit 5s");
    pass(2, "metric oracle equivalence", &format!("2401 matrices in {elapsed:?}"));
}

// --- criterion 3 -------------------------------------------------------

fn random_batch(seed: u64) -> (ReferenceEncoder, TokenBatch, WeightedBatch) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vocab_len = rng.random_range(2..=20usize);
    let dim = rng.random_range(2..=8usize);
    let vocab: Vec<String> = (0..vocab_len).map(|i| format!("w{i}")).collect();
    let encoder = ReferenceEncoder::new(vocab, dim, seed ^ 0xBEEF).unwrap();
    let examples = rng.random_range(1..=8usize);
    let rows: Vec<Vec<u32>> = (0..examples)
        .map(|_| {
            let len = rng.random_range(1..=6usize);
            (0..len).map(|_| rng.random_range(0..=vocab_len as u32)).collect()
        })
        .collect();
    let inputs = TokenBatch::from_rows(&rows);
    let targets: Vec<SentimentClass> = (0..examples)
        .map(|_| SentimentClass::ALL[rng.random_range(0..3usize)])
        .collect();
    let weights: Vec<f64> = (0..examples)
        .map(|_| if rng.random_bool(0.5) { 1.2 } else { 1.0 })
        .collect();
    let batch = WeightedBatch::new(inputs.clone(), targets, weights).unwrap();
    (encoder, inputs, batch)
}

#[test]
fn criterion_3_weighted_loss_correctness() {
    let mut worst_rel = 0.0f64;
    for seed in 0..50u64 {
        let (mut encoder, inputs, batch) = random_batch(seed);
        let logits = encoder.forward(&inputs);
        let (_, grad_logits) = weighted_loss_and_grad(&logits, &batch).unwrap();
        let analytic = encoder.backward(&inputs, &grad_logits);

        // central finite differences over every parameter
        let h = 1e-5;
        for (p, &a) in analytic.iter().enumerate() {
            let orig = encoder.params()[p];
            encoder.params_mut()[p] = orig + h;
            let up = weighted_loss(&encoder.forward(&inputs), &batch).unwrap();
            encoder.params_mut()[p] = orig - h;
            let down = weighted_loss(&encoder.forward(&inputs), &batch).unwrap();
            encoder.params_mut()[p] = orig;
            let fd = (up - down) / (2.0 * h);
            let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-4);
            worst_rel = worst_rel.max(rel);
            assert!(rel < 1e-4, "batch {seed} param {p}: analytic {a} vs fd {fd} (rel {rel:.3e})");
        }

        // uniform weights equal plain mean cross-entropy
        let uniform = WeightedBatch::new(
            inputs.clone(),
            batch.targets.clone(),
            vec![1.0; batch.len()],
        )
        .unwrap();
        let weighted = weighted_loss(&logits, &uniform).unwrap();
        let mut mean = 0.0;
        for (lg, t) in logits.iter().zip(&uniform.targets) {
            let exp_sum: f64 = lg.0.iter().map(|s| s.exp()).sum();
            mean += exp_sum.ln() - lg.0[t.index()];
        }
        mean /= uniform.len() as f64;
        assert!(
            (weighted - mean).abs() < 1e-12,
            "batch {seed}: uniform-weight loss {weighted} vs mean CE {mean}"
        );
    }
    pass(3, "weighted-loss correctness", &format!("50 batches, worst rel err {worst_rel:.2e}"));
}

// --- criterion 4 -------------------------------------------------------

#[test]
fn criterion_4_weighting_semantics() {
    let cfg = TrainConfig::default();
    let row = |conflict| LabeledSentence {
        sentence_id: "x".into(),
        text: "t".into(),
        label: Some(SubjLabel::Obj),
        language: Language::En,
        solved_conflict: conflict,
    };
    assert_eq!(sample_weight(&row(Some(true)), &cfg), 1.2);
    assert_eq!(sample_weight(&row(Some(false)), &cfg), 1.0);
    assert_eq!(sample_weight(&row(None), &cfg), 1.0);
    pass(4, "weighting semantics", "1.2 / 1.0 / 1.0");
}

// --- criterion 5 -------------------------------------------------------

#[test]
fn criterion_5_label_mapping_contract() {
    // round trip through one-hot logits
    for label in [SubjLabel::Obj, SubjLabel::Subj] {
        let logits = SentimentLogits::one_hot(to_sentiment(label));
        assert_eq!(from_logits(&logits).unwrap(), label);
    }

    // invariance sweep on a coarse grid where float rounding cannot
    // collapse strict orderings
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    fn grid(rng: &mut ChaCha8Rng) -> f64 {
        (rng.random_range(-10_000i32..=10_000) as f64) / 1000.0
    }
    for _ in 0..2000 {
        let (a, b, c) = (grid(&mut rng), grid(&mut rng), grid(&mut rng));
        let base = from_logits(&SentimentLogits([a, b, c])).unwrap();

        let delta = grid(&mut rng);
        let nudged = from_logits(&SentimentLogits([a, b + delta, c])).unwrap();
        assert_eq!(base, nudged, "neutral perturbation changed the label");

        let shift = grid(&mut rng);
        let scale = (rng.random_range(1i32..=5000) as f64) / 1000.0;
        let transformed = from_logits(&SentimentLogits([
            a * scale + shift,
            b * scale + shift,
            c * scale + shift,
        ]))
        .unwrap();
        assert_eq!(base, transformed, "positive affine rescale changed the label");
    }
    pass(5, "label-mapping contract", "round trip + 2000 invariance cases");
}

// --- criterion 6 -------------------------------------------------------

fn toy_corpus(path: &Path) {
    let mut content = String::from("sentence_id\tsentence\tlabel\n");
    for i in 0..10 {
        content.push_str(&format!("o{i}\tthe fact stands row{i}\tOBJ\n"));
        content.push_str(&format!("s{i}\tan awful take row{i}\tSUBJ\n"));
    }
    fs::write(path, content).unwrap();
}

fn overfit_run(train: &Path, out_dir: &Path) {
    let out = subjpipe()
        .args([
            "run",
            "--lang", "en",
            "--train", train.to_str().unwrap(),
            "--test", train.to_str().unwrap(),
            "--out-dir", out_dir.to_str().unwrap(),
            "--seed", "1",
            "--epochs", "200",
            "--lr", "0.5",
            "--dim", "8",
        ])
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "run failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn criterion_6_end_to_end_overfit() {
    let started = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let train = dir.path().join("toy.tsv");
    toy_corpus(&train);

    let out1 = dir.path().join("run1");
    let out2 = dir.path().join("run2");
    overfit_run(&train, &out1);
    overfit_run(&train, &out2);

    let metrics = fs::read_to_string(out1.join("metrics.tsv")).unwrap();
    let row = metrics.lines().nth(1).unwrap();
    let accuracy: f64 = row.split('\t').nth(6).unwrap().parse().unwrap();
    assert_eq!(accuracy, 1.0, "training accuracy below 1.0: {row}");

    let pred1 = fs::read(out1.join("predictions.tsv")).unwrap();
    let pred2 = fs::read(out2.join("predictions.tsv")).unwrap();
    assert_eq!(pred1, pred2, "seeded runs produced different prediction bytes");
    assert_eq!(
        String::from_utf8_lossy(&pred1).lines().count(),
        21,
        "header plus one row per sentence"
    );

    let elapsed = started.elapsed();
    assert!(elapsed < Duration::from_secs(30), "took {elapsed:?}, limit 30s");
    pass(6, "end-to-end overfit", &format!("accuracy 1.0, byte-identical reruns, {elapsed:?}"));
}

// --- criterion 7 -------------------------------------------------------

struct Counting {
    inner: StubBackend,
    calls: std::sync::atomic::AtomicUsize,
}

impl TranslationBackend for Counting {
    fn name(&self) -> &str {
        "counting-stub"
    }
    fn translate(&self, text: &str, source: Language) -> subjpipe::Result<String> {
        self.calls.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
        self.inner.translate(text, source)
    }
    fn retry_backoff(&self) -> Duration {
        Duration::ZERO
    }
}

#[test]
fn criterion_7_translation_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let cache_path = dir.path().join("cache.tsv");
    let mapping = dir.path().join("map.tsv");
    fs::write(&mapping, "Das ist gut.\tThis is good.\n").unwrap();

    let rows: Vec<LabeledSentence> = (0..12)
        .map(|i| LabeledSentence {
            sentence_id: format!("g{i}"),
            text: if i == 0 { "Das ist gut.".to_string() } else { format!("Satz {i}.") },
            label: Some(if i % 3 == 0 { SubjLabel::Subj } else { SubjLabel::Obj }),
            language: Language::De,
            solved_conflict: None,
        })
        .collect();
    let split = CorpusSplit {
        split: SplitKind::Train,
        language: Language::De,
        rows,
        skipped_count: 0,
    };

    let backend = Counting {
        inner: StubBackend::from_path(&mapping).unwrap(),
        calls: std::sync::atomic::AtomicUsize::new(0),
    };
    let mut cache = TranslationCache::open(&cache_path).unwrap();
    let first = translate_split(&split, &backend, &mut cache).unwrap();
    let first_calls = backend.calls.load(std::sync::atomic::Ordering::SeqCst);
    assert_eq!(first_calls, 12, "every uncached row goes to the backend once");
    assert_eq!(first.rows[0].text, "This is good.");

    // (id, label) multiset and order both preserved
    let pairs = |s: &CorpusSplit| {
        s.rows
            .iter()
            .map(|r| (r.sentence_id.clone(), r.label))
            .collect::<Vec<_>>()
    };
    assert_eq!(pairs(&split), pairs(&first));

    // fresh cache object from the file: zero backend calls on the rerun
    let backend2 = Counting {
        inner: StubBackend::from_path(&mapping).unwrap(),
        calls: std::sync::atomic::AtomicUsize::new(0),
    };
    let mut cache2 = TranslationCache::open(&cache_path).unwrap();
    let second = translate_split(&split, &backend2, &mut cache2).unwrap();
    assert_eq!(
        backend2.calls.load(std::sync::atomic::Ordering::SeqCst),
        0,
        "second run must be served from the cache"
    );
    assert_eq!(first, second);
    pass(7, "translation pipeline", "12 first-run calls, 0 second-run calls");
}

// --- criterion 8 -------------------------------------------------------

#[test]
fn criterion_8_parser_robustness() {
    const LINES: usize = 1000;
    let words = ["vote", "said", "awful", "fact", "今日", "επίσης", "🙂", "\u{0007}bell"];
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut content = String::new();
    let mut expected_rows = 0usize;

    for i in 0..LINES {
        let id = format!("L{i}");
        let word = words[rng.random_range(0..words.len())];
        let label = if rng.random_bool(0.5) { "OBJ" } else { "SUBJ" };
        // the first line must be data, not header, so start with a valid row
        let kind = if i == 0 { 0 } else { rng.random_range(0..6u32) };
        match kind {
            // valid
            0..=2 => {
                content.push_str(&format!("{id}\t{word} text {i}\t{label}\n"));
                expected_rows += 1;
            }
            // extra interior tabs, recoverable
            3 => {
                content.push_str(&format!("{id}\the\tsaid\t{word}\t{label}\n"));
                expected_rows += 1;
            }
            // junk: no label
            4 => content.push_str(&format!("{id}\tjust {word} text\n")),
            // junk: bad label, whitespace text, or lone field
            _ => match rng.random_range(0..3u32) {
                0 => content.push_str(&format!("{id}\t{word}\tobj\n")),
                1 => content.push_str(&format!("{id}\t \tOBJ\n")),
                _ => content.push_str(&format!("{id}\n")),
            },
        }
    }

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("fuzz.tsv");
    fs::write(&path, content.as_bytes()).unwrap();

    let split = corpus::load_tsv(&path, Language::Multi, SplitKind::Train, false)
        .expect("fuzz file must load without error");
    assert_eq!(
        split.rows.len() + split.skipped_count,
        LINES,
        "rows {} + skipped {} must cover all lines",
        split.rows.len(),
        split.skipped_count
    );
    assert_eq!(split.rows.len(), expected_rows);
    assert!(split.rows.iter().all(|r| r.label.is_some()));
    assert!(split.rows.iter().all(|r| !r.text.trim().is_empty()));
    pass(
        8,
        "parser robustness",
        &format!("{} recovered, {} skipped", split.rows.len(), split.skipped_count),
    );
}

// --- criterion 9 -------------------------------------------------------

#[test]
fn criterion_9_metric_definitions_at_desk_scale() {
    // The headline scores require external pretrained weights, the official
    // corpora, and GPU fine-tuning; what the artifact guarantees is the
    // metric definitions. Check the hand-derivable all-OBJ baseline on the
    // 362/122 test distribution through the file-level scorer.
    let dir = tempfile::tempdir().unwrap();
    let gold = dir.path().join("gold.tsv");
    let pred = dir.path().join("pred.tsv");
    let mut gold_content = String::new();
    let mut pred_content = String::from("sentence_id\tlabel\n");
    for i in 0..484usize {
        let label = if i < 362 { "OBJ" } else { "SUBJ" };
        gold_content.push_str(&format!("e{i}\tsentence {i}\t{label}\n"));
        pred_content.push_str(&format!("e{i}\tOBJ\n"));
    }
    fs::write(&gold, gold_content).unwrap();
    fs::write(&pred, pred_content).unwrap();

    let r = evaluate_files(&gold, &pred).unwrap();
    assert!((r.accuracy - 362.0 / 484.0).abs() < 1e-12);
    assert_eq!(format!("{:.6}", r.accuracy), "0.747934");
    assert_eq!(r.f1_subj, 0.0);
    assert_eq!(r.p_subj, 0.0);
    assert_eq!(r.r_subj, 0.0);

    // the non-reproducibility statement ships in the README
    let readme_path: PathBuf = [env!("CARGO_MANIFEST_DIR"), "..", "..", "README.md"]
        .iter()
        .collect();
    let readme = fs::read_to_string(&readme_path).expect("workspace README present");
    assert!(
        readme.to_lowercase().contains("not reproducible"),
        "README must state that the original scores are out of desk-scale reach"
    );
    pass(9, "metric definitions at desk scale", "all-OBJ baseline 0.747934 / SUBJ F1 0");
}
