//! Command-line front end: `gen`, `train`, `eval`, `diagnose`, `report`.
//!
//! Every command accepts `--config FILE`, a TOML file whose keys mirror the
//! long flag names (with `-` written as `_`); flags given on the command
//! line win. `train` writes its fully resolved settings to `spec.toml` in
//! the output directory, so `train --config OUT/spec.toml` reruns it.
//!
//! Exit codes: 0 success, 1 usage error, 2 runtime or data error.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::checkpoint::{read_checkpoint, write_checkpoint};
use crate::diagnostics::{summarize, write_summary_csv, CsvStreamSink, RatioCollector};
use crate::error::Error;
use crate::model::{Model, ModelKind, DEFAULT_DIM};
use crate::numerics::{derive_seed, SeededRng};
use crate::report::{accuracy_stats, build_report, RatioFiles, ReportOptions, RunSummary};
use crate::trainer::{
    evaluate, train, EpochRecord, TrainConfig, TrainHooks, TrainObserver, DEFAULT_LEARNING_RATE, DEFAULT_MAX_EPOCHS,
    DEFAULT_PATIENCE,
};
use crate::treebank::{
    dataset_stats, gen_dataset_exp1, gen_dataset_exp2, read_dataset, read_split, write_dataset, Dataset, Sizes, Split,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

pub const DEFAULT_RUNS: usize = 5;
pub const DEFAULT_REPORT_DEPTH: usize = 10;
// Sub-stream tag for per-run seeds.
const RUN_TAG: u64 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "treenet",
    version,
    about = "Recursive networks over binary trees: data, training, gradient diagnostics"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a train/dev/test dataset directory.
    Gen(GenArgs),
    /// Train a model on a dataset directory, several independent runs.
    Train(TrainArgs),
    /// Accuracy of a checkpoint on one split of a dataset.
    Eval(EvalArgs),
    /// Continue training a checkpoint and record gradient ratios.
    Diagnose(DiagnoseArgs),
    /// Tables and SVG figures from train/diagnose output directories.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// TOML file with default values for these flags.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// 1: length bands 10i-9..10i; 2: lengths 21..30 with keyword depth i or i+1;
    /// 3: the experiment-1 dataset i=3 used for gradient ratios.
    #[arg(long)]
    pub experiment: Option<u8>,
    /// Dataset index, 1..10.
    #[arg(long)]
    pub i: Option<u32>,
    /// Split sizes train,dev,test [default: 10000,1000,1000].
    #[arg(long)]
    pub sizes: Option<String>,
    /// Generator seed [default: 0].
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dataset directory written by `gen`.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// rnn or rlstm.
    #[arg(long)]
    pub model: Option<String>,
    /// Minibatch size [default: 20 for rnn, 5 for rlstm].
    #[arg(long)]
    pub batch: Option<usize>,
    /// AdaGrad learning rate [default: 0.05].
    #[arg(long)]
    pub lr: Option<f64>,
    /// Epochs without strict dev improvement before stopping [default: 5].
    #[arg(long)]
    pub patience: Option<usize>,
    /// Epoch cap [default: 100].
    #[arg(long)]
    pub max_epochs: Option<usize>,
    /// Representation and memory dimension [default: 50].
    #[arg(long)]
    pub dim: Option<usize>,
    /// Base seed; run r uses a seed derived from it [default: 0].
    #[arg(long)]
    pub seed: Option<u64>,
    /// Independent runs [default: 5].
    #[arg(long)]
    pub runs: Option<usize>,
    /// Record gradient ratios of every training tree to this CSV. A relative
    /// path is placed in each run's directory.
    #[arg(long)]
    pub ratios: Option<PathBuf>,
    /// Record zero wall time so every output file is byte-reproducible.
    #[arg(long)]
    pub deterministic: bool,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Checkpoint file.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Dataset directory.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// train, dev or test [default: test].
    #[arg(long)]
    pub split: Option<String>,
}

#[derive(Debug, Args)]
pub struct DiagnoseArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Checkpoint to continue from (fresh AdaGrad state).
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Dataset directory.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Minibatch size [default: 20 for rnn, 5 for rlstm].
    #[arg(long)]
    pub batch: Option<usize>,
    /// AdaGrad learning rate [default: 0.05].
    #[arg(long)]
    pub lr: Option<f64>,
    /// Early-stopping patience [default: 5].
    #[arg(long)]
    pub patience: Option<usize>,
    /// Epoch cap [default: 100].
    #[arg(long)]
    pub max_epochs: Option<usize>,
    /// Shuffling seed [default: 0].
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub deterministic: bool,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Directories written by `train` or `diagnose`.
    pub inputs: Vec<PathBuf>,
    /// Keyword depth of the ratio-over-epochs figure [default: 10].
    #[arg(long)]
    pub depth: Option<usize>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Values that may come from a `--config` file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub experiment: Option<u8>,
    pub i: Option<u32>,
    pub sizes: Option<String>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub data: Option<PathBuf>,
    pub model: Option<String>,
    pub batch: Option<usize>,
    pub lr: Option<f64>,
    pub patience: Option<usize>,
    pub max_epochs: Option<usize>,
    pub dim: Option<usize>,
    pub runs: Option<usize>,
    pub ratios: Option<PathBuf>,
    pub deterministic: Option<bool>,
    pub checkpoint: Option<PathBuf>,
    pub split: Option<String>,
    pub depth: Option<usize>,
    pub inputs: Option<Vec<PathBuf>>,
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Runtime(e)
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn usage<T>(msg: impl Into<String>) -> CliResult<T> {
    Err(CliError::Usage(msg.into()))
}

fn load_config(path: Option<&Path>) -> CliResult<FileConfig> {
    let Some(path) = path else {
        return Ok(FileConfig::default());
    };
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    toml::from_str(&text).map_err(|e| CliError::Usage(crate::report::toml_err(path, &text, e).to_string()))
}

fn required<T>(value: Option<T>, flag: &str) -> CliResult<T> {
    value.ok_or_else(|| CliError::Usage(format!("missing required --{flag}")))
}

pub fn parse_sizes(s: &str) -> CliResult<Sizes> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    let nums: Option<Vec<usize>> = parts.iter().map(|p| p.parse().ok()).collect();
    match nums.as_deref() {
        Some(&[train, dev, test]) => Ok(Sizes { train, dev, test }),
        _ => usage(format!("--sizes expects train,dev,test counts, got {s:?}")),
    }
}

fn parse_model(s: &str) -> CliResult<ModelKind> {
    s.parse()
        .map_err(|_| CliError::Usage(format!("--model must be rnn or rlstm, got {s:?}")))
}

/// Runs the command line and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.command {
        Command::Gen(a) => cmd_gen(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Diagnose(a) => cmd_diagnose(a),
        Command::Report(a) => cmd_report(a),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            EXIT_USAGE
        }
        Err(CliError::Runtime(e)) => {
            eprintln!("error: {e}");
            EXIT_RUNTIME
        }
    }
}

// ---------------------------------------------------------------------------
// gen

pub fn cmd_gen(a: GenArgs) -> CliResult<()> {
    let f = load_config(a.config.as_deref())?;
    let experiment = required(a.experiment.or(f.experiment), "experiment")?;
    let i = match (experiment, a.i.or(f.i)) {
        (3, None | Some(3)) => 3,
        (3, Some(other)) => return usage(format!("--experiment 3 uses dataset i=3, got --i {other}")),
        (_, Some(i)) => i,
        (_, None) => return usage("missing required --i"),
    };
    if !(1..=10).contains(&i) {
        return usage(format!("--i must be in 1..10, got {i}"));
    }
    let sizes = match a.sizes.or(f.sizes) {
        Some(s) => parse_sizes(&s)?,
        None => Sizes::PAPER,
    };
    let seed = a.seed.or(f.seed).unwrap_or(0);
    let out = required(a.out.or(f.out), "out")?;
    let rng = SeededRng::new(seed);
    let dataset = match experiment {
        1 | 3 => gen_dataset_exp1(i, sizes, &rng)?,
        2 => gen_dataset_exp2(i, sizes, &rng)?,
        other => return usage(format!("--experiment must be 1, 2 or 3, got {other}")),
    };
    write_dataset(&dataset, &out)?;
    print!(
        "wrote {}: train {} dev {} test {}",
        out.display(),
        sizes.train,
        sizes.dev,
        sizes.test
    );
    match dataset_stats(&dataset) {
        Some(s) => println!(
            "; lengths {}..{}; keyword depths {}..{}; constructed trees {}",
            s.min_length, s.max_length, s.min_depth, s.max_depth, s.constructed
        ),
        None => println!(),
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// train

/// Fully resolved `train` settings, saved as `spec.toml`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSpec {
    pub data: PathBuf,
    pub out: PathBuf,
    pub model: String,
    pub batch: usize,
    pub lr: f64,
    pub patience: usize,
    pub max_epochs: usize,
    pub dim: usize,
    pub seed: u64,
    pub runs: usize,
    pub ratios: Option<PathBuf>,
    pub deterministic: bool,
}

fn resolve_train(a: TrainArgs) -> CliResult<TrainSpec> {
    let f = load_config(a.config.as_deref())?;
    let model = required(a.model.or(f.model), "model")?;
    let kind = parse_model(&model)?;
    let spec = TrainSpec {
        data: required(a.data.or(f.data), "data")?,
        out: required(a.out.or(f.out), "out")?,
        model: kind.name().to_string(),
        batch: a.batch.or(f.batch).unwrap_or(kind.default_batch_size()),
        lr: a.lr.or(f.lr).unwrap_or(DEFAULT_LEARNING_RATE),
        patience: a.patience.or(f.patience).unwrap_or(DEFAULT_PATIENCE),
        max_epochs: a.max_epochs.or(f.max_epochs).unwrap_or(DEFAULT_MAX_EPOCHS),
        dim: a.dim.or(f.dim).unwrap_or(DEFAULT_DIM),
        seed: a.seed.or(f.seed).unwrap_or(0),
        runs: a.runs.or(f.runs).unwrap_or(DEFAULT_RUNS),
        ratios: a.ratios.or(f.ratios),
        deterministic: a.deterministic || f.deterministic.unwrap_or(false),
    };
    for (flag, v) in [
        ("batch", spec.batch),
        ("patience", spec.patience),
        ("max-epochs", spec.max_epochs),
        ("dim", spec.dim),
        ("runs", spec.runs),
    ] {
        if v == 0 {
            return usage(format!("--{flag} must be at least 1"));
        }
    }
    if !(spec.lr > 0.0 && spec.lr.is_finite()) {
        return usage(format!("--lr must be positive, got {}", spec.lr));
    }
    if let Some(r) = &spec.ratios {
        if r.is_absolute() && spec.runs > 1 {
            return usage("an absolute --ratios path needs --runs 1; use a relative path to get one file per run");
        }
    }
    Ok(spec)
}

impl TrainSpec {
    fn config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            learning_rate: self.lr,
            batch_size: self.batch,
            patience: self.patience,
            max_epochs: self.max_epochs,
            dim: self.dim,
            seed,
            deterministic: self.deterministic,
        }
    }

    fn kind(&self) -> ModelKind {
        self.model.parse().expect("validated at resolution")
    }
}

/// Seed of run `r` under base seed `seed`.
pub fn run_seed(seed: u64, r: usize) -> u64 {
    derive_seed(seed, &[RUN_TAG, r as u64])
}

/// One training run: writes `train_log.csv`, `best.ckpt` (on every new
/// best) and optionally ratio files into `dir`.
struct RunOutput {
    best: Model,
    best_epoch: usize,
    dev_accuracy: f64,
    ratio_files: Option<(PathBuf, PathBuf)>,
}

fn progress(label: &str, r: &EpochRecord) {
    eprintln!(
        "{label} epoch {}: train loss {:.4}, dev accuracy {:.4}",
        r.epoch, r.train_loss, r.dev_accuracy
    );
}

fn train_run(
    model: Model,
    dataset: &Dataset,
    config: &TrainConfig,
    dir: &Path,
    ratios: Option<&Path>,
    label: &str,
) -> CliResult<RunOutput> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let ckpt = dir.join("best.ckpt");
    let mut on_best = |m: &Model, _epoch: usize| write_checkpoint(m, &ckpt);
    let mut on_epoch = |r: &EpochRecord| progress(label, r);

    let ratio_path = ratios.map(|p| dir.join(p));
    let sink = ratio_path.as_deref().map(CsvStreamSink::create).transpose()?;
    let mut collector = sink.as_ref().map(|s| RatioCollector::new(vec![s]));
    let hooks = TrainHooks {
        observer: collector.as_mut().map(|c| c as &mut dyn TrainObserver),
        on_best: Some(&mut on_best),
        on_epoch: Some(&mut on_epoch),
    };
    let outcome = train(model, dataset, config, hooks)?;
    drop(collector);

    let log_path = dir.join("train_log.csv");
    outcome.log.write_csv(&log_path)?;
    let ratio_files = match (sink, ratio_path) {
        (Some(sink), Some(path)) => {
            sink.finish()?;
            let records = crate::diagnostics::read_records_csv(&path)?;
            if !records.is_empty() {
                write_summary_csv(&summarize(&records)?, &dir.join("ratio_summary.csv"))?;
            }
            Some((path, log_path))
        }
        _ => None,
    };
    let best = outcome.log.best_record().expect("at least one epoch");
    Ok(RunOutput {
        best_epoch: best.epoch,
        dev_accuracy: best.dev_accuracy,
        best: outcome.best,
        ratio_files,
    })
}

fn relative_to(path: &Path, base: &Path) -> String {
    path.strip_prefix(base).unwrap_or(path).display().to_string()
}

pub fn cmd_train(a: TrainArgs) -> CliResult<()> {
    let spec = resolve_train(a)?;
    let dataset = read_dataset(&spec.data)?;
    fs::create_dir_all(&spec.out).map_err(|e| Error::io(&spec.out, e))?;
    let spec_path = spec.out.join("spec.toml");
    let spec_text = toml::to_string(&spec).map_err(|e| Error::invalid(format!("serializing spec: {e}")))?;
    fs::write(&spec_path, spec_text).map_err(|e| Error::io(&spec_path, e))?;

    let kind = spec.kind();
    let mut summary = RunSummary {
        command: "train".into(),
        model: kind.name().into(),
        experiment: dataset.provenance.experiment,
        index: dataset.provenance.index,
        runs: spec.runs,
        seeds: Vec::new(),
        best_epochs: Vec::new(),
        dev_accuracy: Vec::new(),
        test_accuracy: Vec::new(),
        best_run: 0,
        test_max: 0.0,
        test_q1: 0.0,
        test_median: 0.0,
        test_q3: 0.0,
        logs: Vec::new(),
        ratio_files: Vec::new(),
    };
    for r in 0..spec.runs {
        let seed = run_seed(spec.seed, r);
        let config = spec.config(seed);
        let model = config.init_model(kind)?;
        let dir = spec.out.join(format!("run{r}"));
        let out = train_run(
            model,
            &dataset,
            &config,
            &dir,
            spec.ratios.as_deref(),
            &format!("run {r}"),
        )?;
        let test = if dataset.test.is_empty() {
            f64::NAN
        } else {
            evaluate(&out.best, &dataset.test)?
        };
        println!(
            "run {r}: seed {seed}, best epoch {}, dev accuracy {:.4}, test accuracy {test:.4}",
            out.best_epoch, out.dev_accuracy
        );
        summary.seeds.push(seed);
        summary.best_epochs.push(out.best_epoch);
        summary.dev_accuracy.push(out.dev_accuracy);
        summary.test_accuracy.push(test);
        summary.logs.push(relative_to(&dir.join("train_log.csv"), &spec.out));
        if let Some((ratios, log)) = out.ratio_files {
            summary.ratio_files.push(RatioFiles {
                ratios: relative_to(&ratios, &spec.out),
                log: relative_to(&log, &spec.out),
            });
        }
    }
    // Best run by dev accuracy; ties go to the earlier run.
    summary.best_run = (0..spec.runs).fold(0, |b, r| {
        if summary.dev_accuracy[r] > summary.dev_accuracy[b] {
            r
        } else {
            b
        }
    });
    let (max, q1, median, q3) = accuracy_stats(&summary.test_accuracy);
    (summary.test_max, summary.test_q1, summary.test_median, summary.test_q3) = (max, q1, median, q3);
    summary.write(&spec.out)?;
    println!(
        "test accuracy over {} runs: max {max:.4}, median {median:.4}, quartiles {q1:.4}..{q3:.4}",
        spec.runs
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// eval

pub fn cmd_eval(a: EvalArgs) -> CliResult<()> {
    let f = load_config(a.config.as_deref())?;
    let checkpoint = required(a.checkpoint.or(f.checkpoint), "checkpoint")?;
    let data = required(a.data.or(f.data), "data")?;
    let split: Split = a
        .split
        .or(f.split)
        .map(|s| {
            s.parse()
                .map_err(|_| CliError::Usage(format!("--split must be train, dev or test, got {s:?}")))
        })
        .transpose()?
        .unwrap_or(Split::Test);
    let model = read_checkpoint(&checkpoint)?;
    let path = data.join(split.file_name());
    let (_, examples) = read_split(&path)?;
    let accuracy = evaluate(&model, &examples)?;
    let correct = (accuracy * examples.len() as f64).round() as usize;
    println!(
        "{} accuracy {accuracy:.4} ({correct}/{}) on {}",
        split.name(),
        examples.len(),
        path.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// diagnose

pub fn cmd_diagnose(a: DiagnoseArgs) -> CliResult<()> {
    let f = load_config(a.config.as_deref())?;
    let checkpoint = required(a.checkpoint.or(f.checkpoint), "checkpoint")?;
    let data = required(a.data.or(f.data), "data")?;
    let out = required(a.out.or(f.out), "out")?;
    let model = read_checkpoint(&checkpoint)?;
    let kind = model.kind();
    let config = TrainConfig {
        learning_rate: a.lr.or(f.lr).unwrap_or(DEFAULT_LEARNING_RATE),
        batch_size: a.batch.or(f.batch).unwrap_or(kind.default_batch_size()),
        patience: a.patience.or(f.patience).unwrap_or(DEFAULT_PATIENCE),
        max_epochs: a.max_epochs.or(f.max_epochs).unwrap_or(DEFAULT_MAX_EPOCHS),
        dim: model.dim(),
        seed: a.seed.or(f.seed).unwrap_or(0),
        deterministic: a.deterministic || f.deterministic.unwrap_or(false),
    };
    config.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let dataset = read_dataset(&data)?;
    let run = train_run(
        model,
        &dataset,
        &config,
        &out,
        Some(Path::new("ratios.csv")),
        "diagnose",
    )?;
    let test = if dataset.test.is_empty() {
        f64::NAN
    } else {
        evaluate(&run.best, &dataset.test)?
    };
    let (ratios, log) = run.ratio_files.expect("ratios requested");
    let summary = RunSummary {
        command: "diagnose".into(),
        model: kind.name().into(),
        experiment: dataset.provenance.experiment,
        index: dataset.provenance.index,
        runs: 1,
        seeds: vec![config.seed],
        best_epochs: vec![run.best_epoch],
        dev_accuracy: vec![run.dev_accuracy],
        test_accuracy: vec![test],
        best_run: 0,
        test_max: test,
        test_q1: test,
        test_median: test,
        test_q3: test,
        logs: vec![relative_to(&log, &out)],
        ratio_files: vec![RatioFiles {
            ratios: relative_to(&ratios, &out),
            log: relative_to(&log, &out),
        }],
    };
    summary.write(&out)?;
    println!(
        "diagnose: best epoch {}, dev accuracy {:.4}, test accuracy {test:.4}; ratios in {}",
        run.best_epoch,
        run.dev_accuracy,
        ratios.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// report

pub fn cmd_report(a: ReportArgs) -> CliResult<()> {
    let f = load_config(a.config.as_deref())?;
    let inputs = if a.inputs.is_empty() {
        f.inputs.unwrap_or_default()
    } else {
        a.inputs
    };
    if inputs.is_empty() {
        return usage("report needs at least one input directory");
    }
    let out = required(a.out.or(f.out), "out")?;
    let depth = a.depth.or(f.depth).unwrap_or(DEFAULT_REPORT_DEPTH);
    let files = build_report(&inputs, &out, &ReportOptions { depth })?;
    for name in &files.files {
        println!("{}", out.join(name).display());
    }
    Ok(())
}
