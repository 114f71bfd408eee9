//! Acceptance suite. Prints one PASS/FAIL line per criterion.
//!
//! Criteria 1–5 check correctness (gradients, generator, determinism,
//! observer purity, capacity) and gate the exit code. Criteria 6–11 compare
//! trained accuracies and gradient-ratio statistics against reference
//! figures; their FAIL lines are reported as-is but only gate the exit code
//! when `TREENET_ACCEPTANCE_STRICT=1`.
//!
//! Criteria 6–11 train 27 models (9 model/dataset cells, 3 seeds each) on
//! 2000/500/500 splits and take a while on one core. Set
//! `TREENET_ACCEPTANCE=1,2,5` to run a subset.

use std::collections::BTreeMap;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::Instant;

use treenet::checkpoint::checkpoint_to_string;
use treenet::cli::run_seed;
use treenet::diagnostics::{
    exploding_fraction_by_epoch, summarize, MemorySink, RatioCollector, RatioRecord, RatioSummary,
};
use treenet::model::{backward, Model, ModelKind};
use treenet::numerics::SeededRng;
use treenet::trainer::{evaluate, train, train_epoch, AdaGradState, TrainConfig, TrainHooks, TrainLog};
use treenet::treebank::{
    gen_dataset_exp1, gen_dataset_exp2, gen_random_tree, gen_sentence, keyword_depth, label_of_keyword, Dataset,
    LabeledExample, Sizes, EXP2_MAX_LENGTH, EXP2_MIN_LENGTH, NUM_CLASSES,
};

type Check = Result<String, String>;

const DESK_SIZES: Sizes = Sizes {
    train: 2000,
    dev: 500,
    test: 500,
};
const DESK_SEEDS: usize = 3;
/// Cells with fewer ratio records are ignored by the ratio criteria.
const MIN_CELL: usize = 30;

fn ensure(ok: bool, detail: String) -> Check {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// ---------------------------------------------------------------------------
// 1. Gradient oracle

fn random_instance(kind: ModelKind, n: usize, seed: u64) -> (Model, LabeledExample) {
    let mut rng = SeededRng::new(seed);
    let mut model = Model::new(kind, n, &mut rng).unwrap();
    for block in model.dense_blocks_mut() {
        block.iter_mut().for_each(|x| *x = rng.uniform(-0.5, 0.5));
    }
    let len = rng.int_inclusive(2, 6) as usize;
    let sentence = gen_sentence(len, &mut rng).unwrap();
    for &t in &sentence {
        model
            .embeddings
            .row_mut(t)
            .iter_mut()
            .for_each(|x| *x = rng.uniform(-0.5, 0.5));
    }
    let tree = gen_random_tree(&sentence, &mut rng).unwrap();
    let ex = LabeledExample::new(tree, treenet::treebank::TreeOrigin::Random).unwrap();
    (model, ex)
}

fn close(analytic: f64, numeric: f64) -> bool {
    let diff = (analytic - numeric).abs();
    diff <= 1e-8 || diff <= 1e-6 * analytic.abs().max(numeric.abs())
}

fn criterion_1() -> Check {
    let h = 1e-5;
    let mut coords = 0usize;
    let mut instances = 0usize;
    for seed in 0..100u64 {
        for n in [1, 3, 5] {
            for kind in [ModelKind::Rnn, ModelKind::Rlstm] {
                let (model, ex) = random_instance(kind, n, seed * 31 + n as u64);
                let mut trace = model.forward(&ex.tree, Some(ex.label)).unwrap();
                let grads = backward(&mut trace, ex.label, &model).unwrap();
                let loss = |m: &Model| m.loss(&ex.tree, ex.label).unwrap();
                let fail = |what: String, a: f64, fd: f64| {
                    Err(format!(
                        "{kind} n={n} seed={seed}: {what}: analytic {a:e} vs numeric {fd:e}"
                    ))
                };

                let blocks = grads.dense_blocks();
                for (k, block) in blocks.iter().enumerate() {
                    for (j, &a) in block.data.iter().enumerate() {
                        let mut plus = model.clone();
                        plus.dense_blocks_mut()[k][j] += h;
                        let mut minus = model.clone();
                        minus.dense_blocks_mut()[k][j] -= h;
                        let fd = (loss(&plus) - loss(&minus)) / (2.0 * h);
                        if !close(a, fd) {
                            return fail(format!("{}[{j}]", block.name), a, fd);
                        }
                        coords += 1;
                    }
                }
                let mut tokens = ex.tree.leaves();
                tokens.sort();
                tokens.dedup();
                for t in tokens {
                    let g = grads.embeddings.get(&t).expect("gradient row for every leaf");
                    for j in 0..n {
                        let mut plus = model.clone();
                        plus.embeddings.row_mut(t)[j] += h;
                        let mut minus = model.clone();
                        minus.embeddings.row_mut(t)[j] -= h;
                        let fd = (loss(&plus) - loss(&minus)) / (2.0 * h);
                        if !close(g[j], fd) {
                            return fail(format!("embedding {t}[{j}]"), g[j], fd);
                        }
                        coords += 1;
                    }
                }
                instances += 1;
            }
        }
    }
    Ok(format!(
        "{instances} instances (100 seeds x n in {{1,3,5}} x 2 models), {coords} coordinates"
    ))
}

// ---------------------------------------------------------------------------
// 2. Generator invariants

fn criterion_2() -> Check {
    let sizes = Sizes {
        train: 10_000,
        dev: 0,
        test: 0,
    };
    let mut notes = Vec::new();
    for experiment in [1u8, 2] {
        for i in 1..=10u32 {
            let rng = SeededRng::new(9000 + 100 * experiment as u64 + i as u64);
            let d = match experiment {
                1 => gen_dataset_exp1(i, sizes, &rng),
                _ => gen_dataset_exp2(i, sizes, &rng),
            }
            .map_err(|e| e.to_string())?;
            let (lo, hi) = match experiment {
                1 => (10 * i as usize - 9, 10 * i as usize),
                _ => (EXP2_MIN_LENGTH, EXP2_MAX_LENGTH),
            };
            let family = format!("exp{experiment} i={i}");
            if d.train.len() != 10_000 {
                return Err(format!("{family}: {} examples", d.train.len()));
            }
            let mut classes = [0usize; NUM_CLASSES];
            for ex in &d.train {
                let leaves = ex.tree.leaves();
                let keywords: Vec<_> = leaves.iter().filter(|t| t.is_keyword()).collect();
                if keywords.len() != 1 {
                    return Err(format!("{family}: {} keywords in {}", keywords.len(), ex.tree));
                }
                if ex.label != label_of_keyword(*keywords[0]).unwrap() || ex.label as u32 != keywords[0].value() / 100 {
                    return Err(format!("{family}: label {} for keyword {}", ex.label, keywords[0]));
                }
                if !(lo..=hi).contains(&leaves.len()) {
                    return Err(format!("{family}: length {} outside {lo}..={hi}", leaves.len()));
                }
                if ex.tree.internal_count() + 1 != leaves.len() {
                    return Err(format!("{family}: internal/leaf count mismatch"));
                }
                let depth = keyword_depth(&ex.tree).unwrap();
                if depth != ex.keyword_depth {
                    return Err(format!("{family}: stored depth {} != {depth}", ex.keyword_depth));
                }
                if experiment == 2 && depth != i as usize && depth != i as usize + 1 {
                    return Err(format!("{family}: keyword depth {depth}"));
                }
                classes[ex.label as usize] += 1;
            }
            for (c, &count) in classes.iter().enumerate() {
                let f = count as f64 / 10_000.0;
                if (f - 0.1).abs() > 0.02 {
                    return Err(format!("{family}: class {c} frequency {f:.4}"));
                }
            }
            if experiment == 2 && i >= 9 {
                let constructed = d
                    .train
                    .iter()
                    .filter(|e| e.origin == treenet::treebank::TreeOrigin::Constructed)
                    .count();
                notes.push(format!("{family}: {constructed} constructed"));
            }
        }
    }
    Ok(format!("20 families x 10000 examples; {}", notes.join(", ")))
}

// ---------------------------------------------------------------------------
// 3. Determinism of the gen and train commands

fn treenet(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_treenet"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!(
            "treenet {} failed: {}",
            args.join(" "),
            String::from_utf8_lossy(&out.stderr)
        ))
    }
}

fn tree_files(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_path_buf();
                out.insert(rel, fs::read(&path).unwrap());
            }
        }
    }
    out
}

fn criterion_3() -> Check {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let p = |s: &str| tmp.path().join(s).to_str().unwrap().to_string();
    for (out, exp) in [("gen_a", "1"), ("gen_b", "1"), ("gen2_a", "2"), ("gen2_b", "2")] {
        treenet(&[
            "gen",
            "--experiment",
            exp,
            "--i",
            "3",
            "--sizes",
            "300,60,60",
            "--seed",
            "17",
            "--out",
            &p(out),
        ])?;
    }
    let mut files = 0;
    for (a, b) in [("gen_a", "gen_b"), ("gen2_a", "gen2_b")] {
        let (fa, fb) = (tree_files(&tmp.path().join(a)), tree_files(&tmp.path().join(b)));
        if fa != fb {
            return Err(format!("gen outputs {a} and {b} differ"));
        }
        files += fa.len();
    }
    // Both train runs write to the same directory (the resolved spec records
    // it); the first result is moved aside before the second run.
    for model in ["rnn", "rlstm"] {
        let out = p(&format!("train_{model}"));
        let first = tmp.path().join(format!("train_{model}_first"));
        let run = || {
            treenet(&[
                "train",
                "--model",
                model,
                "--data",
                &p("gen_a"),
                "--out",
                &out,
                "--dim",
                "8",
                "--runs",
                "2",
                "--max-epochs",
                "3",
                "--seed",
                "5",
                "--ratios",
                "ratios.csv",
                "--deterministic",
            ])
        };
        run()?;
        fs::rename(&out, &first).map_err(|e| e.to_string())?;
        run()?;
        let (fa, fb) = (tree_files(&first), tree_files(Path::new(&out)));
        if fa.len() < 10 {
            return Err(format!("train wrote only {} files", fa.len()));
        }
        if fa != fb {
            let diff: Vec<_> = fa.keys().filter(|k| fa.get(*k) != fb.get(*k)).collect();
            return Err(format!("{model} train outputs differ in {diff:?}"));
        }
        files += fa.len();
    }
    Ok(format!("{files} files byte-identical across repeated gen/train"))
}

// ---------------------------------------------------------------------------
// 4. Observer purity

fn criterion_4() -> Check {
    let data = gen_dataset_exp1(
        3,
        Sizes {
            train: 300,
            dev: 100,
            test: 0,
        },
        &SeededRng::new(44),
    )
    .unwrap();
    let mut detail = Vec::new();
    for kind in [ModelKind::Rnn, ModelKind::Rlstm] {
        let mut config = TrainConfig::for_model(kind);
        config.dim = 16;
        config.max_epochs = 4;
        config.seed = 8;
        config.deterministic = true;
        let plain = train(config.init_model(kind).unwrap(), &data, &config, TrainHooks::default()).unwrap();
        let sink = MemorySink::new();
        let mut collector = RatioCollector::new(vec![&sink]);
        let observed = train(
            config.init_model(kind).unwrap(),
            &data,
            &config,
            TrainHooks {
                observer: Some(&mut collector),
                ..TrainHooks::default()
            },
        )
        .unwrap();
        let same = checkpoint_to_string(&plain.best) == checkpoint_to_string(&observed.best)
            && checkpoint_to_string(&plain.last) == checkpoint_to_string(&observed.last)
            && plain.log == observed.log;
        if !same {
            return Err(format!("{kind}: checkpoints differ with ratio collection"));
        }
        detail.push(format!("{kind}: {} records, identical checkpoints", sink.len()));
    }
    Ok(detail.join("; "))
}

// ---------------------------------------------------------------------------
// 5. Overfitting a small slice

fn criterion_5() -> Check {
    let mut detail = Vec::new();
    let mut ok = true;
    for i in [1u32, 3] {
        let data = gen_dataset_exp1(
            i,
            Sizes {
                train: 50,
                dev: 0,
                test: 0,
            },
            &SeededRng::new(55),
        )
        .unwrap();
        for kind in [ModelKind::Rnn, ModelKind::Rlstm] {
            let mut config = TrainConfig::for_model(kind);
            config.seed = 3;
            let mut model = config.init_model(kind).unwrap();
            let mut state = AdaGradState::new(&model);
            let mut reached = None;
            let mut acc = 0.0;
            for epoch in 1..=200 {
                train_epoch(&mut model, &data.train, &config, &mut state, epoch, None).unwrap();
                acc = evaluate(&model, &data.train).unwrap();
                if acc >= 0.95 {
                    reached = Some(epoch);
                    break;
                }
            }
            match reached {
                Some(e) => detail.push(format!("{kind} i={i}: {acc:.2} at epoch {e}")),
                None => {
                    ok = false;
                    detail.push(format!("{kind} i={i}: only {acc:.2} after 200 epochs"));
                }
            }
        }
    }
    ensure(ok, detail.join("; "))
}

// ---------------------------------------------------------------------------
// Scaled experiments shared by 6–11

struct Cell {
    test: Vec<f64>,
    /// Ratio records and log of run 0, when requested.
    ratios: Option<(Vec<RatioRecord>, TrainLog)>,
}

impl Cell {
    fn best(&self) -> f64 {
        self.test.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

#[derive(Default)]
struct Experiments {
    datasets: BTreeMap<(u8, u32), Dataset>,
    cells: BTreeMap<(u8, u32, ModelKind), Cell>,
}

impl Experiments {
    fn dataset(&mut self, experiment: u8, i: u32) -> &Dataset {
        self.datasets.entry((experiment, i)).or_insert_with(|| {
            let rng = SeededRng::new(100 * experiment as u64 + i as u64);
            match experiment {
                1 => gen_dataset_exp1(i, DESK_SIZES, &rng).unwrap(),
                _ => gen_dataset_exp2(i, DESK_SIZES, &rng).unwrap(),
            }
        })
    }

    /// Best-of-3 cell at paper hyperparameters; ratios are recorded on run 0
    /// of experiment 1, dataset 3.
    fn cell(&mut self, experiment: u8, i: u32, kind: ModelKind) -> &Cell {
        if !self.cells.contains_key(&(experiment, i, kind)) {
            let record = experiment == 1 && i == 3;
            let data = self.dataset(experiment, i).clone();
            let mut test = Vec::new();
            let mut ratios = None;
            for r in 0..DESK_SEEDS {
                let mut config = TrainConfig::for_model(kind);
                config.seed = run_seed(0, r);
                config.deterministic = true;
                let started = Instant::now();
                let sink = MemorySink::new();
                let mut collector = RatioCollector::new(vec![&sink]);
                let observer = (record && r == 0).then_some(&mut collector as &mut dyn treenet::trainer::TrainObserver);
                let hooks = TrainHooks {
                    observer,
                    ..TrainHooks::default()
                };
                let outcome = train(config.init_model(kind).unwrap(), &data, &config, hooks).unwrap();
                let acc = evaluate(&outcome.best, &data.test).unwrap();
                eprintln!(
                    "    exp{experiment} i={i} {kind} run {r}: {} epochs, best {}, test {acc:.3} ({:.0}s)",
                    outcome.log.epochs.len(),
                    outcome.log.best_epoch.unwrap(),
                    started.elapsed().as_secs_f64()
                );
                test.push(acc);
                drop(collector);
                if record && r == 0 {
                    ratios = Some((sink.into_records(), outcome.log));
                }
            }
            self.cells.insert((experiment, i, kind), Cell { test, ratios });
        }
        &self.cells[&(experiment, i, kind)]
    }

    fn best(&mut self, experiment: u8, i: u32, kind: ModelKind) -> f64 {
        self.cell(experiment, i, kind).best()
    }

    fn ratios(&mut self, kind: ModelKind) -> (Vec<RatioRecord>, TrainLog) {
        self.cell(1, 3, kind).ratios.clone().expect("recorded on run 0")
    }
}

fn check_all(items: Vec<(String, bool)>) -> Check {
    let ok = items.iter().all(|(_, pass)| *pass);
    let text = items
        .into_iter()
        .map(|(s, pass)| format!("{s}{}", if pass { "" } else { " [miss]" }))
        .collect::<Vec<_>>()
        .join("; ");
    ensure(ok, text)
}

fn criterion_6(x: &mut Experiments) -> Check {
    let rnn1 = x.best(1, 1, ModelKind::Rnn);
    let rnn3 = x.best(1, 3, ModelKind::Rnn);
    let rlstm3 = x.best(1, 3, ModelKind::Rlstm);
    check_all(vec![
        (format!("RNN i=1 {rnn1:.3} >= 0.80"), rnn1 >= 0.80),
        (format!("RNN i=3 {rnn3:.3} <= 0.25"), rnn3 <= 0.25),
        (format!("RLSTM i=3 {rlstm3:.3} >= 0.85"), rlstm3 >= 0.85),
    ])
}

fn criterion_7(x: &mut Experiments) -> Check {
    let rnn = x.best(1, 8, ModelKind::Rnn);
    let rlstm = x.best(1, 8, ModelKind::Rlstm);
    check_all(vec![
        (
            format!("|RNN {rnn:.3} - RLSTM {rlstm:.3}| = {:.3} <= 0.15", (rnn - rlstm).abs()),
            (rnn - rlstm).abs() <= 0.15,
        ),
        ("both <= 0.35".to_string(), rnn <= 0.35 && rlstm <= 0.35),
    ])
}

fn criterion_8(x: &mut Experiments) -> Check {
    let rnn2 = x.best(2, 2, ModelKind::Rnn);
    let rnn9 = x.best(2, 9, ModelKind::Rnn);
    let rlstm7 = x.best(2, 7, ModelKind::Rlstm);
    let rlstm9 = x.best(2, 9, ModelKind::Rlstm);
    check_all(vec![
        (format!("RNN i=2 {rnn2:.3} >= 0.80"), rnn2 >= 0.80),
        (format!("RNN i=9 {rnn9:.3} <= 0.25"), rnn9 <= 0.25),
        (format!("RLSTM i=7 {rlstm7:.3} >= 0.80"), rlstm7 >= 0.80),
        (format!("RLSTM i=9 {rlstm9:.3} > 0.20"), rlstm9 > 0.20),
    ])
}

fn populated(summary: &RatioSummary, epoch: usize, depth: usize) -> Option<f64> {
    summary
        .cell(epoch, depth)
        .filter(|c| c.count >= MIN_CELL)
        .map(|c| c.median)
}

fn criterion_9(x: &mut Experiments) -> Check {
    let (records, _) = x.ratios(ModelKind::Rnn);
    let summary = summarize(&records).map_err(|e| e.to_string())?;
    let medians: Vec<(usize, f64)> = (2..=10)
        .filter_map(|d| populated(&summary, 1, d).map(|m| (d, m)))
        .collect();
    let decreasing = medians.windows(2).all(|w| w[1].1 < w[0].1);
    let shown: Vec<String> = medians.iter().map(|(d, m)| format!("d{d}={m:.2e}")).collect();
    let (m2, m10) = (populated(&summary, 1, 2), populated(&summary, 1, 10));
    let drop = match (m2, m10) {
        (Some(a), Some(b)) => (format!("depth10/depth2 = {:.2e} < 1e-2", b / a), b < 1e-2 * a),
        _ => ("depth 2 or 10 has fewer than 30 records".to_string(), false),
    };
    check_all(vec![
        (
            format!("epoch-1 medians {}", shown.join(" ")),
            decreasing && medians.len() >= 2,
        ),
        drop,
    ])
}

fn criterion_10(x: &mut Experiments) -> Check {
    let (lstm_records, lstm_log) = x.ratios(ModelKind::Rlstm);
    let (rnn_records, rnn_log) = x.ratios(ModelKind::Rnn);
    let frac = exploding_fraction_by_epoch(&lstm_records);
    let f = |e: usize| frac.get(&e).copied();
    let late: Vec<f64> = frac.range(5..).map(|(_, v)| *v).collect();
    let late_mean = (!late.is_empty()).then(|| late.iter().sum::<f64>() / late.len() as f64);
    let peak = match (f(1), f(2), late_mean) {
        (Some(e1), Some(e2), Some(l)) => (
            format!("RLSTM frac>1: epoch1 {e1:.3}, epoch2 {e2:.3}, epochs>=5 mean {l:.3}"),
            e2 > e1 && e2 > l,
        ),
        _ => (
            format!("RLSTM ran {} epochs; need epochs 1, 2 and >=5", lstm_log.epochs.len()),
            false,
        ),
    };

    let lstm = summarize(&lstm_records).map_err(|e| e.to_string())?;
    let rnn = summarize(&rnn_records).map_err(|e| e.to_string())?;
    let (le, re) = (lstm_log.epochs.len(), rnn_log.epochs.len());
    let deepest = (0..64)
        .rev()
        .find(|&d| populated(&lstm, le, d).is_some() && populated(&rnn, re, d).is_some());
    let deep = match deepest {
        Some(d) => {
            let (a, b) = (populated(&lstm, le, d).unwrap(), populated(&rnn, re, d).unwrap());
            (
                format!(
                    "depth {d} final-epoch medians RLSTM {a:.2e} vs RNN {b:.2e} (x{:.1})",
                    a / b
                ),
                a >= 10.0 * b,
            )
        }
        None => ("no depth with >=30 records in both final epochs".to_string(), false),
    };
    check_all(vec![peak, deep])
}

fn criterion_11(x: &mut Experiments) -> Check {
    let (records, log) = x.ratios(ModelKind::Rnn);
    let summary = summarize(&records).map_err(|e| e.to_string())?;
    let last = log.epochs.len();
    match (populated(&summary, 1, 10), populated(&summary, last, 10)) {
        (Some(first), Some(fin)) => ensure(
            fin > first,
            format!("RNN depth-10 median epoch 1 {first:.2e} -> epoch {last} {fin:.2e}"),
        ),
        _ => Err("depth 10 has fewer than 30 records".into()),
    }
}

fn main() -> ExitCode {
    let only: Option<Vec<u32>> = std::env::var("TREENET_ACCEPTANCE")
        .ok()
        .map(|s| s.split(',').filter_map(|t| t.trim().parse().ok()).collect());
    let mut experiments = Experiments::default();
    let criteria: Vec<(u32, &str, Box<dyn Fn(&mut Experiments) -> Check>)> = vec![
        (1, "gradient oracle", Box::new(|_| criterion_1())),
        (2, "generator invariants", Box::new(|_| criterion_2())),
        (3, "determinism of gen and train", Box::new(|_| criterion_3())),
        (4, "observer purity", Box::new(|_| criterion_4())),
        (5, "overfit 50 examples", Box::new(|_| criterion_5())),
        (6, "experiment 1 contrast", Box::new(criterion_6)),
        (7, "experiment 1 long sentences", Box::new(criterion_7)),
        (8, "experiment 2 contrast", Box::new(criterion_8)),
        (9, "RNN vanishing signature", Box::new(criterion_9)),
        (10, "RLSTM exploding then stable", Box::new(criterion_10)),
        (11, "RNN recovery at depth 10", Box::new(criterion_11)),
    ];
    let strict = std::env::var("TREENET_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    let (mut failed, mut gating) = (0, 0);
    for (id, name, check) in &criteria {
        if only.as_ref().is_some_and(|o| !o.contains(id)) {
            continue;
        }
        let started = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(|| check(&mut experiments)))
            .unwrap_or_else(|p| Err(format!("panicked: {}", panic_text(&p))));
        let secs = started.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("criterion {id:>2} PASS  {name}: {detail} ({secs:.0}s)"),
            Err(detail) => {
                failed += 1;
                if strict || *id <= 5 {
                    gating += 1;
                }
                println!("criterion {id:>2} FAIL  {name}: {detail} ({secs:.0}s)");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed ({gating} gating)");
    }
    if gating > 0 {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}

fn panic_text(p: &Box<dyn std::any::Any + Send>) -> String {
    p.downcast_ref::<String>()
        .cloned()
        .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
        .unwrap_or_else(|| "unknown panic".into())
}
