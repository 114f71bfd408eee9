//! Run summaries written by `train`/`diagnose`, and the tables and figures
//! `report` builds from them.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::diagnostics::{quantile, read_records_csv, summarize, write_summary_csv, RatioSummary};
use crate::error::{Error, Result};
use crate::svg::{Chart, Series};
use crate::trainer::{csv_err, TrainLog};

pub const SUMMARY_FILE: &str = "summary.toml";

/// Ratio records of one run and the training log they belong to, as paths
/// relative to the summary's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioFiles {
    pub ratios: String,
    pub log: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    /// `train` or `diagnose`.
    pub command: String,
    pub model: String,
    pub experiment: u8,
    pub index: u32,
    pub runs: usize,
    pub seeds: Vec<u64>,
    pub best_epochs: Vec<usize>,
    pub dev_accuracy: Vec<f64>,
    pub test_accuracy: Vec<f64>,
    pub best_run: usize,
    pub test_max: f64,
    pub test_q1: f64,
    pub test_median: f64,
    pub test_q3: f64,
    pub logs: Vec<String>,
    #[serde(default)]
    pub ratio_files: Vec<RatioFiles>,
}

/// `(max, q1, median, q3)` of a nonempty sample.
pub fn accuracy_stats(values: &[f64]) -> (f64, f64, f64, f64) {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    (
        *v.last().expect("nonempty"),
        quantile(&v, 0.25),
        quantile(&v, 0.5),
        quantile(&v, 0.75),
    )
}

impl RunSummary {
    pub fn write(&self, dir: &Path) -> Result<()> {
        let path = dir.join(SUMMARY_FILE);
        let text = toml::to_string(self).map_err(|e| Error::invalid(format!("serializing summary: {e}")))?;
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    pub fn read(dir: &Path) -> Result<RunSummary> {
        let path = dir.join(SUMMARY_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        toml::from_str(&text).map_err(|e| toml_err(&path, &text, e))
    }
}

pub(crate) fn toml_err(path: &Path, text: &str, e: toml::de::Error) -> Error {
    let (line, column) = match e.span() {
        Some(span) => {
            let before = &text[..span.start.min(text.len())];
            let line = before.matches('\n').count() + 1;
            let column = before.len() - before.rfind('\n').map_or(0, |k| k + 1) + 1;
            (line, column)
        }
        None => (1, 1),
    };
    Error::Parse {
        path: path.display().to_string(),
        line,
        column,
        message: e.message().to_string(),
    }
}

/// One row of an accuracy table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyRow {
    pub experiment: u8,
    pub i: u32,
    pub model: String,
    pub runs: usize,
    pub max: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
}

/// Median ratio at one depth over epochs, with the run's dev accuracy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthTraceRow {
    pub epoch: usize,
    pub count: usize,
    pub q1: Option<f64>,
    pub median: Option<f64>,
    pub q3: Option<f64>,
    pub dev_accuracy: Option<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct ReportOptions {
    /// Depth for the ratio-over-epochs figure.
    pub depth: usize,
}

/// Files written by [`build_report`], relative to the output directory.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReportFiles {
    pub files: Vec<String>,
}

pub fn build_report(inputs: &[PathBuf], out: &Path, options: &ReportOptions) -> Result<ReportFiles> {
    if inputs.is_empty() {
        return Err(Error::invalid("report needs at least one run directory"));
    }
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut summaries = Vec::new();
    for dir in inputs {
        summaries.push((dir.clone(), RunSummary::read(dir)?));
    }
    let mut written = ReportFiles::default();
    let provenance: Vec<String> = std::iter::once("generated by treenet report from:".to_string())
        .chain(inputs.iter().map(|p| format!("  {}", p.display())))
        .collect();

    // Accuracy against the dataset index, one table and figure per experiment.
    let mut by_experiment: BTreeMap<u8, Vec<AccuracyRow>> = BTreeMap::new();
    for (_, s) in summaries.iter().filter(|(_, s)| s.command == "train") {
        by_experiment.entry(s.experiment).or_default().push(AccuracyRow {
            experiment: s.experiment,
            i: s.index,
            model: s.model.clone(),
            runs: s.runs,
            max: s.test_max,
            q1: s.test_q1,
            median: s.test_median,
            q3: s.test_q3,
        });
    }
    for (experiment, mut rows) in by_experiment {
        rows.sort_by(|a, b| (&a.model, a.i).cmp(&(&b.model, b.i)));
        let stem = format!("accuracy_exp{experiment}");
        let csv_path = out.join(format!("{stem}.csv"));
        let mut w = csv::Writer::from_path(&csv_path).map_err(|e| csv_err(&csv_path, e))?;
        for r in &rows {
            w.serialize(r).map_err(|e| csv_err(&csv_path, e))?;
        }
        w.flush().map_err(|e| Error::io(&csv_path, e))?;
        written.files.push(format!("{stem}.csv"));

        let mut models: BTreeMap<&str, Vec<&AccuracyRow>> = BTreeMap::new();
        for r in &rows {
            models.entry(&r.model).or_default().push(r);
        }
        let series = models
            .into_iter()
            .flat_map(|(m, rs)| {
                [
                    Series {
                        name: format!("{m} (best run)"),
                        points: rs.iter().map(|r| (r.i as f64, r.max)).collect(),
                        band: rs.iter().map(|r| (r.i as f64, r.q1, r.q3)).collect(),
                        secondary: false,
                    },
                    Series {
                        name: format!("{m} (median run)"),
                        points: rs.iter().map(|r| (r.i as f64, r.median)).collect(),
                        ..Series::default()
                    },
                ]
            })
            .collect();
        let (title, x_label) = match experiment {
            1 => ("Test accuracy vs sentence length", "dataset i (lengths 10i-9 .. 10i)"),
            _ => ("Test accuracy vs keyword depth", "dataset i (keyword depth i or i+1)"),
        };
        let chart = Chart {
            title: title.into(),
            x_label: x_label.into(),
            y_label: "test accuracy".into(),
            series,
            provenance: provenance.clone(),
            ..Chart::default()
        };
        write_file(out, &format!("{stem}.svg"), &chart.to_svg(), &mut written)?;
    }

    // Ratio figures, one set per recorded run.
    let mut used_stems = BTreeMap::<String, usize>::new();
    for (dir, s) in &summaries {
        for files in &s.ratio_files {
            let tag = if s.command == "train" { "" } else { "_diagnose" };
            let base = format!("ratios_{}{tag}_exp{}_i{}", s.model, s.experiment, s.index);
            let k = used_stems.entry(base.clone()).or_insert(0);
            *k += 1;
            let stem = if *k == 1 { base } else { format!("{base}_{k}") };
            let ratios_path = dir.join(&files.ratios);
            let records = read_records_csv(&ratios_path)?;
            if records.is_empty() {
                continue;
            }
            let summary = summarize(&records)?;
            let log = TrainLog::read_csv(&dir.join(&files.log))?;
            let mut prov = provenance.clone();
            prov.push(format!("ratios: {}", ratios_path.display()));

            write_summary_csv(&summary, &out.join(format!("{stem}_summary.csv")))?;
            written.files.push(format!("{stem}_summary.csv"));
            let chart = ratio_by_depth_chart(&summary, &s.model, prov.clone());
            write_file(out, &format!("{stem}_by_depth.svg"), &chart.to_svg(), &mut written)?;

            let rows = depth_trace(&summary, &log, options.depth);
            let csv_name = format!("{stem}_depth{}.csv", options.depth);
            let csv_path = out.join(&csv_name);
            let mut w = csv::Writer::from_path(&csv_path).map_err(|e| csv_err(&csv_path, e))?;
            for r in &rows {
                w.serialize(r).map_err(|e| csv_err(&csv_path, e))?;
            }
            w.flush().map_err(|e| Error::io(&csv_path, e))?;
            written.files.push(csv_name);
            let chart = depth_trace_chart(&rows, &s.model, options.depth, prov);
            write_file(
                out,
                &format!("{stem}_depth{}.svg", options.depth),
                &chart.to_svg(),
                &mut written,
            )?;
        }
    }
    Ok(written)
}

fn write_file(out: &Path, name: &str, text: &str, written: &mut ReportFiles) -> Result<()> {
    let path = out.join(name);
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    written.files.push(name.to_string());
    Ok(())
}

/// Median ratio vs depth with an interquartile band, one series per epoch.
pub fn ratio_by_depth_chart(summary: &RatioSummary, model: &str, provenance: Vec<String>) -> Chart {
    let series = summary
        .epochs()
        .into_iter()
        .map(|e| {
            let cells: Vec<_> = summary.epoch_cells(e).collect();
            Series {
                name: format!("epoch {e}"),
                points: cells.iter().map(|c| (c.depth as f64, c.median)).collect(),
                band: cells.iter().map(|c| (c.depth as f64, c.q1, c.q3)).collect(),
                secondary: false,
            }
        })
        .collect();
    Chart {
        title: format!("{model}: keyword/root error-norm ratio by depth"),
        x_label: "keyword depth".into(),
        y_label: "ratio (median, IQR band)".into(),
        log_y: true,
        series,
        provenance,
        ..Chart::default()
    }
}

/// Per-epoch statistics at `depth`, joined with the dev accuracy of each
/// logged epoch.
pub fn depth_trace(summary: &RatioSummary, log: &TrainLog, depth: usize) -> Vec<DepthTraceRow> {
    let mut epochs: Vec<usize> = summary.epochs();
    epochs.extend(log.epochs.iter().map(|r| r.epoch));
    epochs.sort_unstable();
    epochs.dedup();
    epochs
        .into_iter()
        .map(|e| {
            let cell = summary.cell(e, depth);
            DepthTraceRow {
                epoch: e,
                count: cell.map_or(0, |c| c.count),
                q1: cell.map(|c| c.q1),
                median: cell.map(|c| c.median),
                q3: cell.map(|c| c.q3),
                dev_accuracy: log.epochs.iter().find(|r| r.epoch == e).map(|r| r.dev_accuracy),
            }
        })
        .collect()
}

pub fn depth_trace_chart(rows: &[DepthTraceRow], model: &str, depth: usize, provenance: Vec<String>) -> Chart {
    let ratio = Series {
        name: format!("median ratio, depth {depth}"),
        points: rows.iter().filter_map(|r| Some((r.epoch as f64, r.median?))).collect(),
        band: rows
            .iter()
            .filter_map(|r| Some((r.epoch as f64, r.q1?, r.q3?)))
            .collect(),
        secondary: false,
    };
    let dev = Series {
        name: "dev accuracy".into(),
        points: rows
            .iter()
            .filter_map(|r| Some((r.epoch as f64, r.dev_accuracy?)))
            .collect(),
        band: Vec::new(),
        secondary: true,
    };
    Chart {
        title: format!("{model}: ratio at depth {depth} over training"),
        x_label: "epoch".into(),
        y_label: "ratio (median, IQR band)".into(),
        y2_label: "dev accuracy".into(),
        log_y: true,
        y2_range: Some((0.0, 1.0)),
        series: vec![ratio, dev],
        provenance,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diagnostics::{write_records_csv, RatioRecord};
    use crate::trainer::EpochRecord;

    fn summary(model: &str, experiment: u8, index: u32, acc: &[f64]) -> RunSummary {
        let (max, q1, median, q3) = accuracy_stats(acc);
        RunSummary {
            command: "train".into(),
            model: model.into(),
            experiment,
            index,
            runs: acc.len(),
            seeds: (0..acc.len() as u64).collect(),
            best_epochs: vec![1; acc.len()],
            dev_accuracy: acc.to_vec(),
            test_accuracy: acc.to_vec(),
            best_run: 0,
            test_max: max,
            test_q1: q1,
            test_median: median,
            test_q3: q3,
            logs: vec![],
            ratio_files: vec![],
        }
    }

    #[test]
    fn stats_of_runs() {
        assert_eq!(accuracy_stats(&[0.5]), (0.5, 0.5, 0.5, 0.5));
        let (max, q1, med, q3) = accuracy_stats(&[0.4, 0.1, 0.3, 0.2, 0.5]);
        assert_eq!((max, q1, med, q3), (0.5, 0.2, 0.3, 0.4));
    }

    #[test]
    fn summary_toml_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = summary("rnn", 1, 3, &[0.2, 0.3]);
        s.ratio_files.push(RatioFiles {
            ratios: "run0/ratios.csv".into(),
            log: "run0/train_log.csv".into(),
        });
        s.write(dir.path()).unwrap();
        assert_eq!(RunSummary::read(dir.path()).unwrap(), s);

        fs::write(dir.path().join(SUMMARY_FILE), "command = \"train\"\nruns = \"x\"\n").unwrap();
        let e = RunSummary::read(dir.path()).unwrap_err();
        assert!(matches!(e, Error::Parse { line: 2, .. }), "{e}");
    }

    #[test]
    fn report_builds_tables_and_figures() {
        let root = tempfile::tempdir().unwrap();
        let mut inputs = Vec::new();
        for i in 1..=10 {
            for model in ["rnn", "rlstm"] {
                let dir = root.path().join(format!("{model}{i}"));
                fs::create_dir_all(&dir).unwrap();
                summary(model, 1, i, &[0.1 * i as f64 / 2.0, 0.05]).write(&dir).unwrap();
                inputs.push(dir);
            }
        }
        // One run with ratios.
        let dir = &inputs[0];
        fs::create_dir_all(dir.join("run0")).unwrap();
        let mut records = Vec::new();
        for epoch in 1..=3 {
            for depth in 1..=13 {
                for id in 0..4 {
                    records.push(RatioRecord {
                        epoch,
                        tree_id: depth * 10 + id,
                        keyword_depth: depth,
                        ratio: Some(10f64.powi(-(depth as i32)) * (id + 1) as f64),
                        mem_ratio: Some(0.0),
                    });
                }
            }
        }
        write_records_csv(&records, &dir.join("run0/ratios.csv")).unwrap();
        let log = TrainLog {
            epochs: (1..=3)
                .map(|e| EpochRecord {
                    epoch: e,
                    train_loss: 2.0,
                    dev_accuracy: 0.1 * e as f64,
                    seconds: 0.0,
                })
                .collect(),
            best_epoch: Some(3),
        };
        log.write_csv(&dir.join("run0/train_log.csv")).unwrap();
        let mut s = RunSummary::read(dir).unwrap();
        s.ratio_files.push(RatioFiles {
            ratios: "run0/ratios.csv".into(),
            log: "run0/train_log.csv".into(),
        });
        s.write(dir).unwrap();

        let out = root.path().join("report");
        let files = build_report(&inputs, &out, &ReportOptions { depth: 10 }).unwrap();
        assert!(files.files.contains(&"accuracy_exp1.csv".to_string()));
        let table = fs::read_to_string(out.join("accuracy_exp1.csv")).unwrap();
        assert_eq!(table.lines().count(), 1 + 20);
        assert_eq!(table.lines().filter(|l| l.contains(",rnn,")).count(), 10);

        let summary_csv = fs::read_to_string(out.join("ratios_rnn_exp1_i1_summary.csv")).unwrap();
        assert_eq!(summary_csv.lines().count(), 1 + 3 * 13);
        let trace = fs::read_to_string(out.join("ratios_rnn_exp1_i1_depth10.csv")).unwrap();
        assert_eq!(trace.lines().count(), 1 + 3);
        let svg = fs::read_to_string(out.join("ratios_rnn_exp1_i1_by_depth.svg")).unwrap();
        assert_eq!(svg.matches("<polyline").count(), 3);
        assert!(out.join("ratios_rnn_exp1_i1_depth10.svg").exists());
        assert!(out.join("accuracy_exp1.svg").exists());

        assert!(build_report(&[], &out, &ReportOptions { depth: 10 }).is_err());
    }
}
