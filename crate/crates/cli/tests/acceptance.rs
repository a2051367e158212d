//! Acceptance suite: one PASS/FAIL/SKIP line per criterion. Runs without the
//! libtest harness so the lines always reach the output.

mod common;

use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::*;
use seqmtl::checkpoint::Checkpoint;
use seqmtl::config::{Objective, Preset, SubsetSpec, TrainConfig};
use seqmtl::corpus::{load_task, make_batches, Split, Task};
use seqmtl::fusion::{fuse, FusionMode};
use seqmtl::gradcheck::tiny_model_config;
use seqmtl::heads::{LossCombiner, LossStrategy};
use seqmtl::metrics::{span_f1, token_accuracy, SpanMode};
use seqmtl::synthetic::{generate, SyntheticSpec};
use seqmtl::trainer::{evaluate, predict_tags, Trainer, TrainingData};
use seqmtl::Tensor64;

const OP_TOL: f64 = 1e-4;
const MODEL_TOL: f64 = 1e-3;
const GRADCHECK_BUDGET: Duration = Duration::from_secs(60);
const LOSS_TOL: f64 = 1e-12;
const GRAD_TOL: f64 = 1e-10;
const LOSS_PAIRS: usize = 1000;
const FUSION_TRIALS: usize = 1000;
const METRIC_PAIRS: usize = 200;
const OVERFIT_ACC: f64 = 0.99;
const OVERFIT_EPOCHS: usize = 30;
const OVERFIT_BUDGET: Duration = Duration::from_secs(300);
const GRID_ROWS: usize = 8;
const DEGENERACY_TOL: f64 = 1e-12;
const DEGENERACY_STEPS: usize = 12;
const FON_NER: [usize; 3] = [4343, 621, 1240];
const FON_POS: [usize; 3] = [798, 159, 637];

enum Verdict {
    Pass(String),
    Fail(String),
    Skip(String),
}

type Check = fn() -> Verdict;

fn ensure(ok: bool, detail: String) -> Verdict {
    if ok {
        Verdict::Pass(detail)
    } else {
        Verdict::Fail(detail)
    }
}

fn main() {
    let criteria: [(&str, Check); 9] = [
        ("gradient-correctness", gradient_correctness),
        ("loss-combiner-identity", loss_combiner_identity),
        ("fusion-identities", fusion_identities),
        ("metrics-oracle", metrics_oracle),
        ("overfit", overfit),
        ("experiment-grid-shape", experiment_grid_shape),
        ("single-task-degeneracy", single_task_degeneracy),
        ("determinism-persistence", determinism_persistence),
        ("data-statistics", data_statistics),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, check) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let verdict = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Verdict::Fail(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        let (tag, detail) = match verdict {
            Verdict::Pass(d) => ("PASS", d),
            Verdict::Fail(d) => {
                failed += 1;
                ("FAIL", d)
            }
            Verdict::Skip(d) => ("SKIP", d),
        };
        println!("{tag} {name}: {detail} [{secs:.1}s]");
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}

fn gradient_correctness() -> Verdict {
    let cfg = tiny_model_config(FusionMode::Multiplicative);
    assert_eq!((cfg.encoder.hidden_dim, cfg.encoder.num_layers, cfg.encoder.max_seq_len), (8, 1, 4));
    let dir = tempfile::tempdir().unwrap();
    let start = Instant::now();
    let o = seqmtl(&["gradcheck", "--seed", "0", "--report", "g.tsv"], dir.path());
    let elapsed = start.elapsed();
    let kv = read_kv(&dir.path().join("g.tsv"));
    let mut worst_op = 0.0f64;
    let mut worst_model = 0.0f64;
    let mut names = BTreeSet::new();
    for (k, v) in kv.entries() {
        if let Some(name) = k.strip_prefix("check.").and_then(|k| k.strip_suffix(".max_rel_error")) {
            let e: f64 = v.parse().unwrap();
            if name.starts_with("model_") {
                worst_model = worst_model.max(e);
            } else {
                worst_op = worst_op.max(e);
            }
            names.insert(name.to_string());
        }
    }
    let required = [
        "matmul", "batch_matmul", "add_broadcast", "mul", "softmax", "masked_softmax", "gelu", "layer_norm",
        "cross_entropy", "embedding", "dropout", "fuse_multiplicative", "fuse_additive", "loss_sum", "loss_weighted",
        "model_multiplicative", "model_additive",
    ];
    let missing: Vec<&str> = required.iter().copied().filter(|r| !names.contains(*r)).collect();
    ensure(
        code(&o) == 0 && missing.is_empty() && worst_op < OP_TOL && worst_model < MODEL_TOL && elapsed < GRADCHECK_BUDGET,
        format!(
            "{} checks, max op rel err {worst_op:.2e} (< {OP_TOL:.0e}), max model rel err {worst_model:.2e} (< {MODEL_TOL:.0e}), {:.1}s (< {}s), missing {missing:?}",
            names.len(),
            elapsed.as_secs_f64(),
            GRADCHECK_BUDGET.as_secs()
        ),
    )
}

fn scalar(v: f64) -> Tensor64 {
    Tensor64::parameter(&[1], vec![v]).unwrap()
}

fn desk_small() -> TrainConfig {
    let mut c = TrainConfig::preset(Preset::Desk);
    c.model.hidden_dim = 16;
    c.model.num_heads = 2;
    c.model.num_layers = 1;
    c.model.ffn_dim = 32;
    c.model.max_seq_len = 16;
    c.training.seed = 11;
    c
}

fn synthetic_training_data(config: &TrainConfig) -> TrainingData {
    let corpus = generate(&SyntheticSpec::default());
    let splits = [Split::Train, Split::Dev];
    TrainingData::from_tasks(
        config,
        &corpus.task_data(Task::Ner, &splits).unwrap(),
        &corpus.task_data(Task::Pos, &splits).unwrap(),
    )
    .unwrap()
}

fn loss_combiner_identity() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let weighted = LossCombiner::weighted(0.5, 0.5);
    let sum = LossCombiner::unweighted_sum();
    let mut worst_loss = 0.0f64;
    for _ in 0..LOSS_PAIRS {
        let (a, b) = (rng.random_range(0.0..20.0), rng.random_range(0.0..20.0));
        let w = weighted.combine(&scalar(a), &scalar(b)).unwrap().item().unwrap();
        let s = sum.combine(&scalar(a), &scalar(b)).unwrap().item().unwrap();
        worst_loss = worst_loss.max((w - 0.5 * s).abs());
    }

    let mut sum_cfg = desk_small();
    sum_cfg.training.loss = LossStrategy::UnweightedSum;
    let mut half_cfg = sum_cfg.clone();
    half_cfg.training.loss = LossStrategy::Weighted;
    half_cfg.training.alpha = 0.5;
    half_cfg.training.beta = 0.5;
    let d = synthetic_training_data(&sum_cfg);
    let ner = make_batches(&d.ner_train, &d.vocab, 4, 16, Some(1));
    let pos = make_batches(&d.pos_train, &d.vocab, 4, 16, Some(2));
    let mut ts = Trainer::<f64>::new(&sum_cfg, d.vocab.len(), d.ner_tagset.len(), d.pos_tagset.len()).unwrap();
    let mut th = Trainer::<f64>::new(&half_cfg, d.vocab.len(), d.ner_tagset.len(), d.pos_tagset.len()).unwrap();
    let mut worst_grad = 0.0f64;
    let mut compared = 0usize;
    for (nb, pb) in ner.iter().zip(&pos).take(3) {
        // Identical step counters keep the dropout masks identical.
        th.global_step = ts.global_step;
        let ls = ts.compute_gradients(nb, pb).unwrap();
        let lh = th.compute_gradients(nb, pb).unwrap();
        worst_loss = worst_loss.max((lh.l_combined - 0.5 * ls.l_combined).abs());
        for (ps, ph) in ts.model.parameters().iter().zip(th.model.parameters()) {
            for (gs, gh) in ps.tensor.grad().unwrap().iter().zip(ph.tensor.grad().unwrap()) {
                worst_grad = worst_grad.max((gh - 0.5 * gs).abs());
                compared += 1;
            }
        }
        ts.global_step += 1;
    }
    ensure(
        worst_loss <= LOSS_TOL && worst_grad <= GRAD_TOL && compared > 0,
        format!("{LOSS_PAIRS} pairs max |W-0.5S| {worst_loss:.1e} (<= {LOSS_TOL:.0e}); {compared} gradient entries max diff {worst_grad:.1e} (<= {GRAD_TOL:.0e})"),
    )
}

fn bits(t: &Tensor64) -> Vec<u64> {
    t.to_vec().iter().map(|v| v.to_bits()).collect()
}

fn fusion_identities() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(43);
    let mut violations = Vec::new();
    for trial in 0..FUSION_TRIALS {
        let shape = [rng.random_range(1..4usize), rng.random_range(1..7usize), rng.random_range(1..10usize)];
        let n: usize = shape.iter().product();
        let rand_t = |rng: &mut ChaCha8Rng| {
            let scale = 10f64.powi(rng.random_range(-3..4));
            Tensor64::new(&shape, (0..n).map(|_| rng.random_range(-1.0..1.0) * scale).collect()).unwrap()
        };
        let a = rand_t(&mut rng);
        let b = rand_t(&mut rng);
        let ones = Tensor64::ones(&shape).unwrap();
        let zeros = Tensor64::zeros(&shape).unwrap();
        let mult = FusionMode::Multiplicative;
        let add = FusionMode::Additive;
        let checks = [
            ("mult ones", bits(&fuse(&a, &ones, mult).unwrap()) == bits(&a)),
            ("add zeros", bits(&fuse(&a, &zeros, add).unwrap()) == bits(&a)),
            ("mult commutes", bits(&fuse(&a, &b, mult).unwrap()) == bits(&fuse(&b, &a, mult).unwrap())),
            ("add commutes", bits(&fuse(&a, &b, add).unwrap()) == bits(&fuse(&b, &a, add).unwrap())),
        ];
        for (what, ok) in checks {
            if !ok {
                violations.push(format!("trial {trial}: {what}"));
            }
        }
    }
    ensure(
        violations.is_empty(),
        format!("{FUSION_TRIALS} trials, 4 bitwise identities each, violations {violations:?}"),
    )
}

/// conlleval chunk boundaries: a chunk starts at B, or at I whose type
/// differs from the previous tag's (O counts as a different type).
fn oracle_chunks(sentence: usize, tags: &[String]) -> Vec<(usize, String, usize, usize)> {
    let split = |t: &str| -> (char, String) {
        if t == "O" {
            ('O', String::new())
        } else {
            (t.chars().next().unwrap(), t[2..].to_string())
        }
    };
    let mut chunks = Vec::new();
    let mut start: Option<(usize, String)> = None;
    let (mut prev_tag, mut prev_type) = ('O', String::new());
    for i in 0..=tags.len() {
        let (tag, kind) = if i < tags.len() { split(&tags[i]) } else { ('O', String::new()) };
        let ends = prev_tag != 'O' && (tag == 'B' || tag == 'O' || kind != prev_type);
        let starts = tag == 'B' || (tag == 'I' && (prev_tag == 'O' || kind != prev_type));
        if ends {
            if let Some((s, k)) = start.take() {
                chunks.push((sentence, k, s, i));
            }
        }
        if starts {
            start = Some((i, kind.clone()));
        }
        prev_tag = tag;
        prev_type = kind;
    }
    chunks
}

fn oracle_ratio(num: usize, den: usize, other_empty: bool) -> f64 {
    match (den, other_empty) {
        (0, true) => 1.0,
        (0, false) => 0.0,
        _ => num as f64 / den as f64,
    }
}

fn metrics_oracle() -> Verdict {
    const NER_TAGS: [&str; 7] = ["O", "B-PER", "I-PER", "B-LOC", "I-LOC", "B-ORG", "I-ORG"];
    const POS_TAGS: [&str; 5] = ["NOUN", "VERB", "ADJ", "DET", "ADP"];
    let mut rng = ChaCha8Rng::seed_from_u64(47);
    let mut mismatches = Vec::new();
    let mut cases = Vec::new();
    for case in 0..METRIC_PAIRS {
        let sentences = rng.random_range(1..6usize);
        let mut gold = Vec::new();
        let mut pred = Vec::new();
        for _ in 0..sentences {
            let len = rng.random_range(1..13usize);
            let g: Vec<String> = match case {
                0 | 1 => vec!["O".to_string(); len],
                _ => (0..len).map(|_| NER_TAGS[rng.random_range(0..NER_TAGS.len())].to_string()).collect(),
            };
            let p: Vec<String> = match case {
                0 | 2 => vec!["O".to_string(); len],
                _ => g
                    .iter()
                    .map(|t| if rng.random_bool(0.3) { NER_TAGS[rng.random_range(0..NER_TAGS.len())].to_string() } else { t.clone() })
                    .collect(),
            };
            gold.push(g);
            pred.push(p);
        }
        cases.push((gold, pred));
    }
    // Literally empty corpus: no sentences at all.
    cases.push((Vec::new(), Vec::new()));

    for (i, (gold, pred)) in cases.iter().enumerate() {
        let g: BTreeSet<_> = gold.iter().enumerate().flat_map(|(s, t)| oracle_chunks(s, t)).collect();
        let p: BTreeSet<_> = pred.iter().enumerate().flat_map(|(s, t)| oracle_chunks(s, t)).collect();
        let tp = g.intersection(&p).count();
        let precision = oracle_ratio(tp, p.len(), g.is_empty());
        let recall = oracle_ratio(tp, g.len(), p.is_empty());
        let f1 = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
        let r = span_f1(gold, pred, SpanMode::Lenient).unwrap();
        let got = (r.counts.true_positives, r.counts.predicted, r.counts.gold, r.precision, r.recall, r.value.to_bits());
        let want = (tp, p.len(), g.len(), Some(precision), Some(recall), f1.to_bits());
        if got != want {
            mismatches.push(format!("span case {i}: {got:?} vs {want:?}"));
        }
    }
    let degenerate = (
        span_f1(&cases[0].0, &cases[0].1, SpanMode::Lenient).unwrap().value,
        span_f1(&cases[2].0, &cases[2].1, SpanMode::Lenient).unwrap(),
    );
    if degenerate.0 != 1.0 {
        mismatches.push("empty-empty F1 is not 1".into());
    }
    if degenerate.1.counts.gold > 0 && (degenerate.1.value != 0.0 || degenerate.1.recall != Some(0.0)) {
        mismatches.push("all-O prediction does not score 0".into());
    }

    for case in 0..METRIC_PAIRS {
        let sentences = rng.random_range(1..6usize);
        let mut gold = Vec::new();
        let mut pred = Vec::new();
        for _ in 0..sentences {
            let len = rng.random_range(1..13usize);
            let g: Vec<String> = (0..len).map(|_| POS_TAGS[rng.random_range(0..POS_TAGS.len())].to_string()).collect();
            let p: Vec<String> = g
                .iter()
                .map(|t| if case > 0 && rng.random_bool(0.4) { POS_TAGS[rng.random_range(0..POS_TAGS.len())].to_string() } else { t.clone() })
                .collect();
            gold.push(g);
            pred.push(p);
        }
        let mut hits = 0usize;
        let mut total = 0usize;
        for (gs, ps) in gold.iter().zip(&pred) {
            for j in 0..gs.len() {
                total += 1;
                if gs[j] == ps[j] {
                    hits += 1;
                }
            }
        }
        let r = token_accuracy(&gold, &pred).unwrap();
        if r.value.to_bits() != (hits as f64 / total as f64).to_bits() || r.counts.true_positives != hits || r.counts.gold != total {
            mismatches.push(format!("accuracy case {case}: {} vs {hits}/{total}", r.value));
        }
        if case == 0 && r.value != 1.0 {
            mismatches.push("identical POS sequences do not score 1".into());
        }
    }
    ensure(
        mismatches.is_empty(),
        format!(
            "{} span-F1 pairs (incl. empty-empty, all-O) and {METRIC_PAIRS} accuracy pairs vs brute-force oracles, mismatches {mismatches:?}",
            cases.len()
        ),
    )
}

fn overfit() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let data = synthetic_data(dir.path());
    let spec = SyntheticSpec::default();
    let ner_train = load_task(&data, Task::Ner, &[Split::Train]).unwrap();
    let pos_train = load_task(&data, Task::Pos, &[Split::Train]).unwrap();
    let all = SubsetSpec::All;
    let ner = ner_train.select(&all.resolve(ner_train.subsets()), Split::Train).unwrap().unwrap();
    let pos = pos_train.select(&all.resolve(pos_train.subsets()), Split::Train).unwrap().unwrap();
    let words: BTreeSet<&String> = ner.sentences.iter().chain(&pos.sentences).flat_map(|s| &s.tokens).collect();
    assert_eq!((ner.sentences.len(), pos.sentences.len()), (64, 64));
    assert!(words.len() <= spec.vocab_size);

    let start = Instant::now();
    let o = seqmtl(
        &["train", "--preset", "desk", "--fusion", "multiplicative", "--loss", "weighted", "--data-root", "data", "--out", "runs"],
        dir.path(),
    );
    let elapsed = start.elapsed();
    if code(&o) != 0 {
        return Verdict::Fail(format!("train exited {}: {}", code(&o), stderr(&o)));
    }
    let run = run_dir(&dir.path().join("runs"));
    let manifest = read_kv(&run.join("manifest.tsv"));
    let epochs: usize = manifest.get("config.training.epochs").unwrap().parse().unwrap();

    let r = Checkpoint::load(&run.join("last.ckpt")).unwrap().restore::<f64>().unwrap();
    let mut acc = Vec::new();
    for (task, corpus, tagset) in [(Task::Ner, &ner, &r.ner_tagset), (Task::Pos, &pos, &r.pos_tagset)] {
        let pred = predict_tags(&r.model, task, &r.vocab, tagset, corpus).unwrap();
        let gold: Vec<Vec<String>> = corpus.sentences.iter().map(|s| s.tags.clone()).collect();
        acc.push(token_accuracy(&gold, &pred).unwrap().value);
    }

    let ckpt = run.join("last.ckpt");
    let e = seqmtl(&["evaluate", "--checkpoint", ckpt.to_str().unwrap(), "--split", "train", "--report", "train.tsv"], dir.path());
    let reported = read_kv(&dir.path().join("train.tsv"));
    let reported_pos: f64 = reported.parse("pos.value").unwrap();
    let reported_ner: f64 = reported.parse("ner.value").unwrap();
    ensure(
        code(&e) == 0 && acc.iter().all(|&a| a >= OVERFIT_ACC) && reported_pos >= OVERFIT_ACC && epochs <= OVERFIT_EPOCHS && elapsed < OVERFIT_BUDGET,
        format!(
            "train token accuracy NER {:.4} POS {:.4} (>= {OVERFIT_ACC}), evaluate reports NER F1 {reported_ner:.4} POS acc {reported_pos:.4}, {epochs} epochs, {:.1}s (< {}s)",
            acc[0],
            acc[1],
            elapsed.as_secs_f64(),
            OVERFIT_BUDGET.as_secs()
        ),
    )
}

fn experiment_grid_shape() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let data = synthetic_data(dir.path());
    let o = seqmtl(&["ablate", "--preset", "desk", "--epochs", "2", "--data-root", "data", "--out", "grid"], dir.path());
    if code(&o) != 0 {
        return Verdict::Fail(format!("ablate exited {}: {}", code(&o), stderr(&o)));
    }
    let kv = read_kv(&dir.path().join("grid/table.tsv"));
    let rows: usize = kv.parse("rows").unwrap();
    let target = kv.get("target_subset").unwrap().to_string();
    let expected = [
        ("multiplicative", "ner", "all"),
        ("multiplicative", "ner", "single"),
        ("multiplicative", "pos", "all"),
        ("multiplicative", "pos", "single"),
        ("additive", "ner", "all"),
        ("additive", "ner", "single"),
        ("additive", "pos", "all"),
        ("additive", "pos", "single"),
    ];
    let ner_dev = load_task(&data, Task::Ner, &[Split::Dev]).unwrap();
    let pos_dev = load_task(&data, Task::Pos, &[Split::Dev]).unwrap();
    let keys = vec![target.clone()];
    let ner = ner_dev.select(&keys, Split::Dev).unwrap().unwrap();
    let pos = pos_dev.select(&keys, Split::Dev).unwrap().unwrap();
    let mut problems = Vec::new();
    let mut runs = BTreeSet::new();
    for (i, (fusion, task, regime)) in expected.iter().enumerate().take(rows) {
        let p = format!("row.{}.", i + 1);
        let got = (
            kv.get(&format!("{p}fusion")).unwrap(),
            kv.get(&format!("{p}task")).unwrap(),
            kv.get(&format!("{p}regime")).unwrap(),
        );
        if got.0 != *fusion || got.1 != *task || !got.2.starts_with(regime) {
            problems.push(format!("row {} is {got:?}", i + 1));
        }
        let ckpt = dir.path().join("grid").join(kv.get(&format!("{p}checkpoint")).unwrap());
        runs.insert(ckpt.clone());
        match Checkpoint::load(&ckpt).and_then(|c| c.restore::<f64>()) {
            Ok(r) => {
                let e = evaluate(&r.model, &r.vocab, &r.ner_tagset, &r.pos_tagset, &ner, &pos).unwrap();
                let value = if *task == "ner" { e.ner.value } else { e.pos.value };
                if kv.get(&format!("{p}value")) != Some(value.to_string().as_str()) {
                    problems.push(format!("row {} value does not reproduce from its checkpoint", i + 1));
                }
            }
            Err(e) => problems.push(format!("row {} checkpoint: {e}", i + 1)),
        }
    }
    ensure(
        rows == GRID_ROWS && runs.len() == 4 && problems.is_empty(),
        format!("{rows} rows (== {GRID_ROWS}) from {} runs, fusion x task x regime order, all checkpoints reload and reproduce; problems {problems:?}", runs.len()),
    )
}

fn single_task_degeneracy() -> Verdict {
    let mut joint = desk_small();
    joint.training.loss = LossStrategy::Weighted;
    joint.training.alpha = 1.0;
    joint.training.beta = 0.0;
    let mut single = joint.clone();
    single.training.objective = Objective::Single(Task::Ner);
    let d = synthetic_training_data(&joint);
    let mut a = Trainer::<f64>::new(&joint, d.vocab.len(), d.ner_tagset.len(), d.pos_tagset.len()).unwrap();
    let mut b = Trainer::<f64>::new(&single, d.vocab.len(), d.ner_tagset.len(), d.pos_tagset.len()).unwrap();
    let snapshot = |t: &Trainer<f64>| t.model.parameters().iter().map(|p| p.tensor.to_vec()).collect::<Vec<_>>();
    let init_a = snapshot(&a);
    assert_eq!(init_a, snapshot(&b));
    let ner = make_batches(&d.ner_train, &d.vocab, 4, 16, Some(5));
    let pos = make_batches(&d.pos_train, &d.vocab, 4, 16, Some(6));
    let mut worst = 0.0f64;
    let mut steps = 0;
    for (nb, pb) in ner.iter().cycle().zip(pos.iter().cycle()).take(DEGENERACY_STEPS) {
        let before = snapshot(&a);
        a.train_step(nb, pb).unwrap();
        b.train_step(nb, pb).unwrap();
        let (pa, pb_) = (snapshot(&a), snapshot(&b));
        for ((x, y), z) in pa.iter().zip(&pb_).zip(&before) {
            for ((xa, yb), z0) in x.iter().zip(y).zip(z) {
                worst = worst.max(((xa - z0) - (yb - z0)).abs());
            }
        }
        steps += 1;
    }
    ensure(
        worst <= DEGENERACY_TOL && steps == DEGENERACY_STEPS,
        format!("{steps} steps, max per-step parameter delta difference {worst:.1e} (<= {DEGENERACY_TOL:.0e})"),
    )
}

fn determinism_persistence() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    synthetic_data(dir.path());
    let train = |out: &str| {
        let mut a = vec!["train", "--data-root", "data", "--out", out, "--epochs", "3"];
        a.extend_from_slice(&SMALL[..2]);
        a.extend_from_slice(&SMALL[4..]);
        let o = seqmtl(&a, dir.path());
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        run_dir(&dir.path().join(out))
    };
    let (ra, rb) = (train("a"), train("b"));
    let read = |p: &Path| std::fs::read(p).unwrap();
    let same_log = read(&ra.join("epochs.csv")) == read(&rb.join("epochs.csv"));
    let same_ckpt = read(&ra.join("last.ckpt")) == read(&rb.join("last.ckpt"));

    let ckpt = ra.join("best.ckpt");
    let o = seqmtl(&["evaluate", "--checkpoint", ckpt.to_str().unwrap(), "--report", "dev.tsv"], dir.path());
    let dev = read_kv(&dir.path().join("dev.tsv"));
    let trained = read_kv(&ra.join("report.tsv"));
    let epoch: usize = trained.parse("selected_epoch").unwrap();
    let log = String::from_utf8(read(&ra.join("epochs.csv"))).unwrap();
    let row: Vec<&str> = log.lines().nth(epoch).unwrap().split(',').collect();
    let reproduces = code(&o) == 0
        && dev.get("ner.value") == Some(row[5])
        && dev.get("pos.value") == Some(row[6])
        && dev.get("ner.value") == trained.get("ner.value")
        && dev.get("pos.value") == trained.get("pos.value");
    ensure(
        same_log && same_ckpt && reproduces,
        format!(
            "epoch logs identical: {same_log}, final checkpoints identical: {same_ckpt}, reloaded best.ckpt reproduces epoch {epoch} dev metrics (NER {} POS {}): {reproduces}",
            row[5], row[6]
        ),
    )
}

fn data_statistics() -> Verdict {
    let Some(root) = std::env::var_os("SEQMTL_FON_DATA") else {
        return Verdict::Skip("set SEQMTL_FON_DATA to a data root holding the released Fon NER and POS files".into());
    };
    let subset = std::env::var("SEQMTL_FON_SUBSET").unwrap_or_else(|_| "fon".into());
    let dir = tempfile::tempdir().unwrap();
    let root = std::path::PathBuf::from(root);
    let o = seqmtl(&["inspect-data", "--data-root", root.to_str().unwrap(), "--report", "stats.tsv"], dir.path());
    if code(&o) != 0 {
        return Verdict::Fail(format!("inspect-data exited {}: {}", code(&o), stderr(&o)));
    }
    let kv = read_kv(&dir.path().join("stats.tsv"));
    let counts = |task: &str| -> Vec<usize> {
        ["train", "dev", "test"]
            .iter()
            .map(|s| kv.get(&format!("{task}.{subset}.{s}.sentences")).and_then(|v| v.parse().ok()).unwrap_or(0))
            .collect()
    };
    let (ner, pos) = (counts("ner"), counts("pos"));
    ensure(
        ner == FON_NER && pos == FON_POS,
        format!("subset {subset}: NER {ner:?} (expected {FON_NER:?}), POS {pos:?} (expected {FON_POS:?})"),
    )
}
