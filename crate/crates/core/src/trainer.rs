//! AdaGrad minibatch training with dev-set early stopping.
//!
//! Gradients are summed over each minibatch and applied with one AdaGrad
//! step per batch:
//!
//! ```text
//! G ← G + g⊙g
//! θ ← θ − lr · g / (√G + ε)
//! ```
//!
//! Embeddings are trained alongside the composer and classifier. Only the
//! embedding rows of tokens present in the batch carry a gradient; rows
//! without one are left untouched, which is exactly what a dense update with
//! a zero gradient would do.

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{backward_into, predict, Gradients, Model, ModelKind, DEFAULT_DIM, VOCAB_SIZE};
use crate::numerics::{derive_seed, SeededRng};
use crate::treebank::{Dataset, LabeledExample};

pub const DEFAULT_LEARNING_RATE: f64 = 0.05;
pub const ADAGRAD_EPSILON: f64 = 1e-8;
pub const DEFAULT_PATIENCE: usize = 5;
pub const DEFAULT_MAX_EPOCHS: usize = 100;

// Sub-stream tags for seeds derived from `TrainConfig::seed`.
const INIT_TAG: u64 = 1;
const SHUFFLE_TAG: u64 = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub patience: usize,
    pub max_epochs: usize,
    pub dim: usize,
    pub seed: u64,
    /// Record zero wall time so logs are byte-reproducible.
    pub deterministic: bool,
}

impl TrainConfig {
    pub fn for_model(kind: ModelKind) -> Self {
        TrainConfig {
            learning_rate: DEFAULT_LEARNING_RATE,
            batch_size: kind.default_batch_size(),
            patience: DEFAULT_PATIENCE,
            max_epochs: DEFAULT_MAX_EPOCHS,
            dim: DEFAULT_DIM,
            seed: 0,
            deterministic: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("batch_size", self.batch_size),
            ("patience", self.patience),
            ("max_epochs", self.max_epochs),
            ("dim", self.dim),
        ] {
            if v == 0 {
                return Err(Error::invalid(format!("{name} must be at least 1")));
            }
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::invalid(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }

    /// Fresh model for this configuration, drawn from a seed derived from
    /// `self.seed`.
    pub fn init_model(&self, kind: ModelKind) -> Result<Model> {
        self.validate()?;
        let mut rng = SeededRng::new(derive_seed(self.seed, &[INIT_TAG]));
        let mut model = Model::new(kind, self.dim, &mut rng)?;
        model.lineage = vec![self.seed, INIT_TAG];
        Ok(model)
    }
}

/// One AdaGrad update of a parameter block. The block is left untouched if
/// the gradient holds a non-finite value.
pub fn adagrad_step(
    param: &mut [f64],
    grad: &[f64],
    accum: &mut [f64],
    lr: f64,
    epsilon: f64,
    block: &str,
) -> Result<()> {
    if param.len() != grad.len() || param.len() != accum.len() {
        return Err(Error::Shape {
            op: "adagrad_step",
            left: format!("{block}: {} params", param.len()),
            right: format!("{} grads, {} accumulators", grad.len(), accum.len()),
        });
    }
    if let Some(k) = grad.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFinite(format!("gradient of {block} at index {k}")));
    }
    for ((p, &g), acc) in param.iter_mut().zip(grad).zip(accum.iter_mut()) {
        if g == 0.0 {
            continue;
        }
        *acc += g * g;
        *p -= lr * g / (acc.sqrt() + epsilon);
    }
    Ok(())
}

/// Squared-gradient accumulators for every parameter of a model.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaGradState {
    dense: Vec<Vec<f64>>,
    embeddings: Vec<f64>,
    dim: usize,
    pub epsilon: f64,
}

impl AdaGradState {
    pub fn new(model: &Model) -> Self {
        AdaGradState {
            dense: model.dense_blocks().iter().map(|b| vec![0.0; b.data.len()]).collect(),
            embeddings: vec![0.0; VOCAB_SIZE * model.dim()],
            dim: model.dim(),
            epsilon: ADAGRAD_EPSILON,
        }
    }

    /// Accumulators of the dense blocks, in [`Model::dense_blocks`] order.
    pub fn dense_accumulators(&self) -> &[Vec<f64>] {
        &self.dense
    }

    pub fn embedding_accumulators(&self) -> &[f64] {
        &self.embeddings
    }

    pub fn step(&mut self, model: &mut Model, grads: &Gradients, lr: f64) -> Result<()> {
        let names: Vec<String> = grads.dense_blocks().iter().map(|b| b.name.clone()).collect();
        let grad_blocks = grads.dense_blocks();
        if grad_blocks.len() != self.dense.len() || model.dim() != self.dim {
            return Err(Error::Shape {
                op: "adagrad",
                left: format!("{} blocks, dim {}", grad_blocks.len(), model.dim()),
                right: format!("{} accumulators, dim {}", self.dense.len(), self.dim),
            });
        }
        // Refuse the whole step before touching anything.
        for b in &grad_blocks {
            if let Some(k) = b.data.iter().position(|g| !g.is_finite()) {
                return Err(Error::NonFinite(format!("gradient of {} at index {k}", b.name)));
            }
        }
        for (tok, g) in &grads.embeddings {
            if g.as_slice().iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("gradient of embedding row {tok}")));
            }
        }
        for (((param, grad), acc), name) in model
            .dense_blocks_mut()
            .into_iter()
            .zip(&grad_blocks)
            .zip(&mut self.dense)
            .zip(&names)
        {
            adagrad_step(param, grad.data, acc, lr, self.epsilon, name)?;
        }
        let n = self.dim;
        for (tok, g) in &grads.embeddings {
            let row = tok.index();
            adagrad_step(
                model.embeddings.row_mut(*tok),
                g.as_slice(),
                &mut self.embeddings[row * n..(row + 1) * n],
                lr,
                self.epsilon,
                "embeddings",
            )?;
        }
        Ok(())
    }
}

/// Called after every training example's backward pass. Observers only get
/// shared references, so they cannot influence training.
pub trait TrainObserver {
    fn after_backward(
        &mut self,
        epoch: usize,
        example_index: usize,
        example: &LabeledExample,
        trace: &crate::model::ForwardTrace,
    );
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub mean_loss: f64,
    pub updates: usize,
}

/// Order in which `epoch` (1-based) visits the training examples.
pub fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    SeededRng::new(derive_seed(seed, &[SHUFFLE_TAG, epoch as u64])).shuffle(&mut order);
    order
}

/// One pass over `train` in a freshly shuffled order.
pub fn train_epoch(
    model: &mut Model,
    train: &[LabeledExample],
    config: &TrainConfig,
    state: &mut AdaGradState,
    epoch: usize,
    mut observer: Option<&mut dyn TrainObserver>,
) -> Result<EpochStats> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::invalid("empty training split"));
    }
    let order = epoch_order(train.len(), config.seed, epoch);
    let mut grads = Gradients::zeros_like(model);
    let mut total_loss = 0.0;
    let mut updates = 0;
    for batch in order.chunks(config.batch_size) {
        for &k in batch {
            let ex = &train[k];
            let mut trace = model.forward(&ex.tree, Some(ex.label))?;
            total_loss += trace.loss().expect("labelled forward");
            backward_into(&mut trace, ex.label, model, &mut grads)?;
            if let Some(obs) = observer.as_deref_mut() {
                obs.after_backward(epoch, k, ex, &trace);
            }
        }
        state.step(model, &grads, config.learning_rate)?;
        updates += 1;
        grads = Gradients::zeros_like(model);
    }
    Ok(EpochStats {
        mean_loss: total_loss / train.len() as f64,
        updates,
    })
}

/// Fraction of `examples` classified correctly.
pub fn evaluate(model: &Model, examples: &[LabeledExample]) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::invalid("accuracy of an empty example list is undefined"));
    }
    let mut correct = 0usize;
    for ex in examples {
        let trace = model.forward(&ex.tree, None)?;
        if predict(&trace) == ex.label {
            correct += 1;
        }
    }
    Ok(correct as f64 / examples.len() as f64)
}

/// Patience bookkeeping: an epoch improves only if it strictly beats the best
/// dev accuracy so far.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopping {
    patience: usize,
    best: Option<(usize, f64)>,
    since_best: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    /// New best; keep going.
    Improved,
    Continue,
    Stop,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best: None,
            since_best: 0,
        }
    }

    pub fn observe(&mut self, epoch: usize, accuracy: f64) -> StopDecision {
        match self.best {
            Some((_, best)) if accuracy <= best => {
                self.since_best += 1;
                if self.since_best >= self.patience {
                    StopDecision::Stop
                } else {
                    StopDecision::Continue
                }
            }
            _ => {
                self.best = Some((epoch, accuracy));
                self.since_best = 0;
                StopDecision::Improved
            }
        }
    }

    /// `(epoch, accuracy)` of the best epoch so far.
    pub fn best(&self) -> Option<(usize, f64)> {
        self.best
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_accuracy: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
}

impl TrainLog {
    pub fn best_record(&self) -> Option<&EpochRecord> {
        let best = self.best_epoch?;
        self.epochs.iter().find(|r| r.epoch == best)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
        for r in &self.epochs {
            w.serialize(r).map_err(|e| csv_err(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path) -> Result<TrainLog> {
        let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
        let mut log = TrainLog::default();
        let mut best: Option<(usize, f64)> = None;
        for rec in r.deserialize() {
            let rec: EpochRecord = rec.map_err(|e| csv_err(path, e))?;
            if best.is_none_or(|(_, acc)| rec.dev_accuracy > acc) {
                best = Some((rec.epoch, rec.dev_accuracy));
            }
            log.epochs.push(rec);
        }
        log.best_epoch = best.map(|(e, _)| e);
        Ok(log)
    }
}

pub(crate) fn csv_err(path: &Path, e: csv::Error) -> Error {
    let message = match e.position() {
        Some(pos) => format!("line {}: {e}", pos.line()),
        None => e.to_string(),
    };
    Error::Csv {
        path: path.to_path_buf(),
        message,
    }
}

/// Everything [`train`] produces.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Snapshot from the epoch with the best dev accuracy.
    pub best: Model,
    /// Parameters after the last epoch that ran.
    pub last: Model,
    pub log: TrainLog,
}

/// Hooks for [`train`].
#[derive(Default)]
pub struct TrainHooks<'a> {
    pub observer: Option<&'a mut dyn TrainObserver>,
    /// Called with each new best snapshot and its epoch.
    pub on_best: Option<&'a mut dyn FnMut(&Model, usize) -> Result<()>>,
    /// Called after each epoch with its log record.
    pub on_epoch: Option<&'a mut dyn FnMut(&EpochRecord)>,
}

/// Trains until `patience` epochs pass without a strictly better dev
/// accuracy, or `max_epochs` is reached, and returns the best snapshot.
pub fn train(model: Model, dataset: &Dataset, config: &TrainConfig, hooks: TrainHooks<'_>) -> Result<TrainOutcome> {
    train_with_dev_metric(model, dataset, config, hooks, |m| evaluate(m, &dataset.dev))
}

/// [`train`] with the dev-set metric supplied by the caller.
pub fn train_with_dev_metric(
    mut model: Model,
    dataset: &Dataset,
    config: &TrainConfig,
    mut hooks: TrainHooks<'_>,
    mut dev_metric: impl FnMut(&Model) -> Result<f64>,
) -> Result<TrainOutcome> {
    config.validate()?;
    if dataset.train.is_empty() || dataset.dev.is_empty() {
        return Err(Error::invalid("training needs nonempty train and dev splits"));
    }
    if model.dim() != config.dim {
        return Err(Error::Shape {
            op: "train",
            left: format!("model dim {}", model.dim()),
            right: format!("config dim {}", config.dim),
        });
    }
    let mut state = AdaGradState::new(&model);
    let mut stopper = EarlyStopping::new(config.patience);
    let mut log = TrainLog::default();
    let mut best = model.clone();

    for epoch in 1..=config.max_epochs {
        let started = Instant::now();
        let stats = train_epoch(
            &mut model,
            &dataset.train,
            config,
            &mut state,
            epoch,
            match hooks.observer {
                Some(ref mut o) => Some(&mut **o as &mut dyn TrainObserver),
                None => None,
            },
        )?;
        let dev_accuracy = dev_metric(&model)?;
        let seconds = if config.deterministic {
            0.0
        } else {
            started.elapsed().as_secs_f64()
        };
        let record = EpochRecord {
            epoch,
            train_loss: stats.mean_loss,
            dev_accuracy,
            seconds,
        };
        if let Some(cb) = hooks.on_epoch.as_deref_mut() {
            cb(&record);
        }
        log.epochs.push(record);
        match stopper.observe(epoch, dev_accuracy) {
            StopDecision::Improved => {
                best = model.clone();
                log.best_epoch = Some(epoch);
                if let Some(cb) = hooks.on_best.as_deref_mut() {
                    cb(&best, epoch)?;
                }
            }
            StopDecision::Continue => {}
            StopDecision::Stop => break,
        }
    }
    Ok(TrainOutcome { best, last: model, log })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::treebank::{gen_dataset_exp1, Sizes};

    #[test]
    fn adagrad_examples() {
        let (mut p, mut g) = ([1.0], [0.0]);
        adagrad_step(&mut p, &[2.0], &mut g, 0.05, ADAGRAD_EPSILON, "x").unwrap();
        assert_eq!(g[0], 4.0);
        assert!((p[0] - 0.95).abs() < 1e-9);

        let (mut p, mut g) = ([1.0], [3.0]);
        adagrad_step(&mut p, &[0.0], &mut g, 0.05, ADAGRAD_EPSILON, "x").unwrap();
        assert_eq!((p[0], g[0]), (1.0, 3.0));

        let (mut p, mut g) = ([0.0], [0.0]);
        adagrad_step(&mut p, &[1.0], &mut g, 1.0, ADAGRAD_EPSILON, "x").unwrap();
        assert!((p[0] + 1.0).abs() < 1e-7);
        adagrad_step(&mut p, &[1.0], &mut g, 1.0, ADAGRAD_EPSILON, "x").unwrap();
        assert!((p[0] + 1.0 + 1.0 / 2f64.sqrt()).abs() < 1e-7);
    }

    #[test]
    fn adagrad_rejects_non_finite() {
        let (mut p, mut g) = ([1.0, 2.0], [0.0, 0.0]);
        let err = adagrad_step(&mut p, &[0.5, f64::NAN], &mut g, 0.05, 1e-8, "rnn.W").unwrap_err();
        assert!(err.to_string().contains("rnn.W"));
        assert_eq!(p, [1.0, 2.0]);
    }

    #[test]
    fn early_stopping_rule() {
        let mut s = EarlyStopping::new(5);
        let accs = [0.5, 0.6, 0.6, 0.6, 0.6, 0.6, 0.6];
        let decisions: Vec<_> = accs.iter().enumerate().map(|(e, &a)| s.observe(e + 1, a)).collect();
        assert_eq!(decisions.last(), Some(&StopDecision::Stop));
        assert!(decisions[..6].iter().all(|d| *d != StopDecision::Stop));
        assert_eq!(s.best(), Some((2, 0.6)));

        let mut s = EarlyStopping::new(5);
        for (e, a) in [0.1, 0.2, 0.3, 0.4, 0.5, 0.6].iter().enumerate() {
            assert_eq!(s.observe(e + 1, *a), StopDecision::Improved);
        }

        let mut s = EarlyStopping::new(5);
        for (e, a) in [0.5, 0.5, 0.5, 0.5, 0.5].iter().enumerate() {
            assert_ne!(s.observe(e + 1, *a), StopDecision::Stop);
        }
        assert_eq!(s.observe(6, 0.7), StopDecision::Improved);
        for e in 7..11 {
            assert_eq!(s.observe(e, 0.7), StopDecision::Continue);
        }
        assert_eq!(s.observe(11, 0.7), StopDecision::Stop);
    }

    fn tiny_dataset(train: usize) -> Dataset {
        gen_dataset_exp1(
            1,
            Sizes {
                train,
                dev: 10,
                test: 10,
            },
            &SeededRng::new(5),
        )
        .unwrap()
    }

    fn small_config(kind: ModelKind) -> TrainConfig {
        TrainConfig {
            dim: 4,
            seed: 11,
            ..TrainConfig::for_model(kind)
        }
    }

    #[test]
    fn updates_per_epoch() {
        let cfg = small_config(ModelKind::Rnn);
        for (n, expected) in [(10, 1), (100, 5), (101, 6)] {
            let ds = tiny_dataset(n);
            let mut m = cfg.init_model(ModelKind::Rnn).unwrap();
            let mut st = AdaGradState::new(&m);
            let stats = train_epoch(&mut m, &ds.train, &cfg, &mut st, 1, None).unwrap();
            assert_eq!(stats.updates, expected);
        }
    }

    #[test]
    fn epoch_is_bit_reproducible() {
        let ds = tiny_dataset(40);
        let cfg = small_config(ModelKind::Rlstm);
        let run = || {
            let mut m = cfg.init_model(ModelKind::Rlstm).unwrap();
            let mut st = AdaGradState::new(&m);
            train_epoch(&mut m, &ds.train, &cfg, &mut st, 1, None).unwrap();
            (m, st)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn accumulators_never_decrease() {
        let ds = tiny_dataset(30);
        let cfg = small_config(ModelKind::Rnn);
        let mut m = cfg.init_model(ModelKind::Rnn).unwrap();
        let mut st = AdaGradState::new(&m);
        let mut prev = st.clone();
        for epoch in 1..4 {
            train_epoch(&mut m, &ds.train, &cfg, &mut st, epoch, None).unwrap();
            for (a, b) in prev.dense.iter().flatten().zip(st.dense.iter().flatten()) {
                assert!(b >= a);
            }
            for (a, b) in prev.embeddings.iter().zip(&st.embeddings) {
                assert!(b >= a);
            }
            prev = st.clone();
        }
    }

    #[test]
    fn evaluate_edges() {
        let ds = tiny_dataset(10);
        let m = small_config(ModelKind::Rnn).init_model(ModelKind::Rnn).unwrap();
        assert!(evaluate(&m, &[]).is_err());
        let acc = evaluate(&m, &ds.train).unwrap();
        assert!((0.0..=1.0).contains(&acc));
    }

    #[test]
    fn train_stops_on_plateau_and_returns_best_snapshot() {
        let ds = tiny_dataset(20);
        let cfg = TrainConfig {
            patience: 5,
            ..small_config(ModelKind::Rnn)
        };
        let scripted = [0.5, 0.6, 0.6, 0.6, 0.6, 0.6, 0.6, 0.9];
        let mut calls = 0;
        let mut snapshots = Vec::new();
        let mut on_best = |m: &Model, e: usize| {
            snapshots.push((e, m.clone()));
            Ok(())
        };
        let out = train_with_dev_metric(
            cfg.init_model(ModelKind::Rnn).unwrap(),
            &ds,
            &cfg,
            TrainHooks {
                on_best: Some(&mut on_best),
                ..Default::default()
            },
            |_| {
                calls += 1;
                Ok(scripted[calls - 1])
            },
        )
        .unwrap();
        assert_eq!(out.log.epochs.len(), 7);
        assert_eq!(out.log.best_epoch, Some(2));
        assert_eq!(out.log.best_record().unwrap().dev_accuracy, 0.6);
        assert_eq!(snapshots.last().unwrap().0, 2);
        assert_eq!(snapshots.last().unwrap().1, out.best);
        assert_ne!(out.best, out.last);
    }

    #[test]
    fn train_runs_to_cap_when_always_improving() {
        let ds = tiny_dataset(10);
        let cfg = TrainConfig {
            max_epochs: 6,
            ..small_config(ModelKind::Rnn)
        };
        let mut acc = 0.0;
        let out = train_with_dev_metric(
            cfg.init_model(ModelKind::Rnn).unwrap(),
            &ds,
            &cfg,
            TrainHooks::default(),
            |_| {
                acc += 0.1;
                Ok(acc)
            },
        )
        .unwrap();
        assert_eq!(out.log.epochs.len(), 6);
        assert_eq!(out.log.best_epoch, Some(6));
    }

    #[test]
    fn log_csv_round_trip() {
        let log = TrainLog {
            epochs: vec![
                EpochRecord {
                    epoch: 1,
                    train_loss: 2.25,
                    dev_accuracy: 0.125,
                    seconds: 0.0,
                },
                EpochRecord {
                    epoch: 2,
                    train_loss: 1.5,
                    dev_accuracy: 0.5,
                    seconds: 1.25,
                },
            ],
            best_epoch: Some(2),
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.csv");
        log.write_csv(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("epoch,train_loss,dev_accuracy,seconds\n"));
        assert_eq!(TrainLog::read_csv(&path).unwrap(), log);
    }

    #[test]
    fn config_validation() {
        let mut cfg = TrainConfig::for_model(ModelKind::Rnn);
        assert_eq!(cfg.batch_size, 20);
        assert_eq!(TrainConfig::for_model(ModelKind::Rlstm).batch_size, 5);
        assert_eq!((cfg.learning_rate, cfg.patience, cfg.dim), (0.05, 5, 50));
        cfg.batch_size = 0;
        assert!(cfg.validate().is_err());
        cfg.batch_size = 1;
        cfg.learning_rate = 0.0;
        assert!(cfg.validate().is_err());
    }
}
