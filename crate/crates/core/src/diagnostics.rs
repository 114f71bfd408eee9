//! Gradient-ratio probe for vanishing and exploding error signals.
//!
//! For one backpropagated tree the ratio is
//!
//! ```text
//! ‖∂J/∂rep at the keyword leaf‖ / ‖∂J/∂rep at the root‖
//! ```
//!
//! Values far below 1 mean the signal reaching the keyword has vanished;
//! values above 1 mean it has grown on the way down. The same ratio over
//! memory gradients is kept as an auxiliary column (always 0 for the RNN,
//! and undefined at the root, whose memory gradient is zero, so the
//! auxiliary column divides by the root's *rep* error norm instead).

use std::collections::BTreeMap;
use std::fs::File;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ForwardTrace;
use crate::numerics::norm;
use crate::trainer::{csv_err, TrainObserver};
use crate::treebank::LabeledExample;

/// Ratios above this count as exploding.
pub const EXPLODING_THRESHOLD: f64 = 1.0;
/// Ratios below this count as vanished.
pub const VANISHED_THRESHOLD: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatioRecord {
    pub epoch: usize,
    /// Index of the example in the training split.
    pub tree_id: usize,
    pub keyword_depth: usize,
    /// `None` when the root error norm is zero.
    pub ratio: Option<f64>,
    /// `‖∂J/∂mem‖` at the keyword over `‖∂J/∂rep‖` at the root.
    pub mem_ratio: Option<f64>,
}

impl RatioRecord {
    fn sort_key(&self) -> (usize, usize, usize) {
        (self.epoch, self.keyword_depth, self.tree_id)
    }
}

/// Keyword-to-root error-norm ratio of a backpropagated trace, or `None`
/// if the root error is exactly zero.
pub fn gradient_ratio(trace: &ForwardTrace) -> Result<Option<f64>> {
    Ok(ratios(trace)?.0)
}

/// `(rep ratio, mem ratio)`; both share the root rep-norm denominator.
fn ratios(trace: &ForwardTrace) -> Result<(Option<f64>, Option<f64>)> {
    if !trace.is_backpropagated() {
        return Err(Error::invalid("gradient ratio needs a backpropagated trace"));
    }
    let keyword = trace
        .keyword_node()
        .ok_or_else(|| Error::invalid("gradient ratio needs exactly one keyword leaf"))?;
    let root = norm(trace.root().err_rep.as_slice());
    if root == 0.0 {
        return Ok((None, None));
    }
    Ok((
        Some(norm(keyword.err_rep.as_slice()) / root),
        Some(norm(keyword.err_mem.as_slice()) / root),
    ))
}

/// Destination for ratio records; appends may come from several threads.
pub trait RatioSink: Sync {
    fn push(&self, record: RatioRecord);
}

#[derive(Debug, Default)]
pub struct MemorySink {
    records: Mutex<Vec<RatioRecord>>,
}

impl MemorySink {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.records.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn into_records(self) -> Vec<RatioRecord> {
        self.records.into_inner().unwrap()
    }
}

impl RatioSink for MemorySink {
    fn push(&self, record: RatioRecord) {
        self.records.lock().unwrap().push(record);
    }
}

/// Streams records to a CSV file one epoch at a time. Records of an epoch
/// are buffered and written sorted by `(depth, tree_id)` once the next epoch
/// starts or the sink is finished, so the file is in canonical order as long
/// as epochs arrive in increasing order.
pub struct CsvStreamSink {
    path: PathBuf,
    state: Mutex<StreamState>,
}

struct StreamState {
    writer: csv::Writer<File>,
    pending: Vec<RatioRecord>,
    written: usize,
    error: Option<Error>,
}

impl StreamState {
    fn flush_pending(&mut self, path: &Path) {
        self.pending.sort_by_key(RatioRecord::sort_key);
        for r in self.pending.drain(..) {
            if self.error.is_some() {
                break;
            }
            match self.writer.serialize(r) {
                Ok(()) => self.written += 1,
                Err(e) => self.error = Some(csv_err(path, e)),
            }
        }
        self.pending.clear();
        if self.error.is_none() {
            if let Err(e) = self.writer.flush() {
                self.error = Some(Error::io(path, e));
            }
        }
    }
}

impl CsvStreamSink {
    pub fn create(path: &Path) -> Result<Self> {
        let mut writer = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
        writer.write_record(RECORD_HEADER).map_err(|e| csv_err(path, e))?;
        let writer = {
            // The header is written by hand so an empty file still has it.
            let inner = writer.into_inner().map_err(|e| Error::io(path, e.into_error()))?;
            csv::WriterBuilder::new().has_headers(false).from_writer(inner)
        };
        Ok(CsvStreamSink {
            path: path.to_path_buf(),
            state: Mutex::new(StreamState {
                writer,
                pending: Vec::new(),
                written: 0,
                error: None,
            }),
        })
    }

    /// Writes any buffered records and returns how many were written.
    pub fn finish(self) -> Result<usize> {
        let mut state = self.state.into_inner().unwrap();
        state.flush_pending(&self.path);
        match state.error {
            Some(e) => Err(e),
            None => Ok(state.written),
        }
    }
}

impl RatioSink for CsvStreamSink {
    fn push(&self, record: RatioRecord) {
        let mut state = self.state.lock().unwrap();
        if state.pending.last().is_some_and(|r| r.epoch != record.epoch) {
            state.flush_pending(&self.path);
        }
        state.pending.push(record);
    }
}

/// Training observer that turns every backward pass into a [`RatioRecord`].
pub struct RatioCollector<'a> {
    sinks: Vec<&'a dyn RatioSink>,
    collected: usize,
    undefined: usize,
}

impl<'a> RatioCollector<'a> {
    pub fn new(sinks: Vec<&'a dyn RatioSink>) -> Self {
        RatioCollector {
            sinks,
            collected: 0,
            undefined: 0,
        }
    }

    pub fn collected(&self) -> usize {
        self.collected
    }

    /// Records whose root error norm was zero.
    pub fn undefined(&self) -> usize {
        self.undefined
    }
}

impl TrainObserver for RatioCollector<'_> {
    fn after_backward(&mut self, epoch: usize, example_index: usize, example: &LabeledExample, trace: &ForwardTrace) {
        // Training traces are always backpropagated and carry one keyword.
        let (ratio, mem_ratio) = ratios(trace).expect("training trace");
        if ratio.is_none() {
            self.undefined += 1;
        }
        let record = RatioRecord {
            epoch,
            tree_id: example_index,
            keyword_depth: example.keyword_depth,
            ratio,
            mem_ratio,
        };
        for sink in &self.sinks {
            sink.push(record);
        }
        self.collected += 1;
    }
}

/// Statistics of the defined ratios in one `(epoch, depth)` cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatioCell {
    pub epoch: usize,
    pub depth: usize,
    pub count: usize,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub frac_exploding: f64,
    pub frac_vanished: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RatioSummary {
    /// Sorted by `(epoch, depth)`; cells without defined ratios are omitted.
    pub cells: Vec<RatioCell>,
    /// Records excluded because their ratio is undefined.
    pub undefined: usize,
}

impl RatioSummary {
    pub fn cell(&self, epoch: usize, depth: usize) -> Option<&RatioCell> {
        self.cells
            .binary_search_by_key(&(epoch, depth), |c| (c.epoch, c.depth))
            .ok()
            .map(|k| &self.cells[k])
    }

    pub fn epochs(&self) -> Vec<usize> {
        let mut e: Vec<usize> = self.cells.iter().map(|c| c.epoch).collect();
        e.dedup();
        e
    }

    pub fn epoch_cells(&self, epoch: usize) -> impl Iterator<Item = &RatioCell> {
        self.cells.iter().filter(move |c| c.epoch == epoch)
    }
}

/// Quantile of sorted data by linear interpolation between order
/// statistics (`h = (n−1)p`).
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty data");
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn summarize(records: &[RatioRecord]) -> Result<RatioSummary> {
    if records.is_empty() {
        return Err(Error::invalid("cannot summarize an empty record list"));
    }
    let mut groups: BTreeMap<(usize, usize), Vec<f64>> = BTreeMap::new();
    let mut undefined = 0;
    for r in records {
        match r.ratio {
            Some(v) => groups.entry((r.epoch, r.keyword_depth)).or_default().push(v),
            None => undefined += 1,
        }
    }
    let cells = groups
        .into_iter()
        .map(|((epoch, depth), mut v)| {
            v.sort_by(f64::total_cmp);
            let n = v.len() as f64;
            RatioCell {
                epoch,
                depth,
                count: v.len(),
                q1: quantile(&v, 0.25),
                median: quantile(&v, 0.5),
                q3: quantile(&v, 0.75),
                frac_exploding: v.iter().filter(|&&x| x > EXPLODING_THRESHOLD).count() as f64 / n,
                frac_vanished: v.iter().filter(|&&x| x < VANISHED_THRESHOLD).count() as f64 / n,
            }
        })
        .collect();
    Ok(RatioSummary { cells, undefined })
}

/// Fraction of defined ratios above [`EXPLODING_THRESHOLD`] per epoch,
/// pooled over all depths.
pub fn exploding_fraction_by_epoch(records: &[RatioRecord]) -> BTreeMap<usize, f64> {
    let mut counts: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    for r in records {
        if let Some(v) = r.ratio {
            let c = counts.entry(r.epoch).or_default();
            c.1 += 1;
            if v > EXPLODING_THRESHOLD {
                c.0 += 1;
            }
        }
    }
    counts
        .into_iter()
        .map(|(e, (hot, all))| (e, hot as f64 / all as f64))
        .collect()
}

const RECORD_HEADER: [&str; 5] = ["epoch", "tree_id", "keyword_depth", "ratio", "mem_ratio"];

/// Writes records sorted by `(epoch, depth, tree_id)`. Undefined ratios are
/// empty fields.
pub fn write_records_csv(records: &[RatioRecord], path: &Path) -> Result<()> {
    let mut sorted = records.to_vec();
    sorted.sort_by_key(RatioRecord::sort_key);
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(|e| csv_err(path, e))?;
    w.write_record(RECORD_HEADER).map_err(|e| csv_err(path, e))?;
    for r in &sorted {
        w.serialize(r).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_records_csv(path: &Path) -> Result<Vec<RatioRecord>> {
    read_csv(path, &RECORD_HEADER)
}

const SUMMARY_HEADER: [&str; 8] = [
    "epoch",
    "depth",
    "count",
    "q1",
    "median",
    "q3",
    "frac_exploding",
    "frac_vanished",
];

pub fn write_summary_csv(summary: &RatioSummary, path: &Path) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(|e| csv_err(path, e))?;
    w.write_record(SUMMARY_HEADER).map_err(|e| csv_err(path, e))?;
    for c in &summary.cells {
        w.serialize(c).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_summary_csv(path: &Path) -> Result<RatioSummary> {
    let mut cells: Vec<RatioCell> = read_csv(path, &SUMMARY_HEADER)?;
    cells.sort_by_key(|c| (c.epoch, c.depth));
    Ok(RatioSummary { cells, undefined: 0 })
}

fn read_csv<T: serde::de::DeserializeOwned>(path: &Path, header: &[&str]) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let found = r.headers().map_err(|e| csv_err(path, e))?.clone();
    if !found.iter().eq(header.iter().copied()) {
        return Err(Error::Csv {
            path: path.to_path_buf(),
            message: format!("line 1: expected header `{}`", header.join(",")),
        });
    }
    r.deserialize().map(|row| row.map_err(|e| csv_err(path, e))).collect()
}
