//! File formats written by the commands. Every record leads with
//! `format_version`.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use mtrnn::model::GateTrace;
use mtrnn::train::{Evaluation, TrainReport};
use serde::{Deserialize, Serialize};

use crate::error::{write_error, CliResult};

pub const OUTPUT_VERSION: u32 = 1;

/// One line of `metrics.jsonl` / one row of `metrics.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub format_version: u32,
    pub epoch: usize,
    pub task: String,
    pub split: String,
    pub loss: f64,
    pub accuracy: f64,
    pub steps: usize,
    pub seconds: f64,
}

impl MetricRecord {
    /// Flattens a training report. `seconds` is 0 unless `wall_clock`.
    pub fn from_report(report: &TrainReport, task_names: &[String], wall_clock: bool) -> Vec<Self> {
        report
            .rows
            .iter()
            .map(|r| MetricRecord {
                format_version: OUTPUT_VERSION,
                epoch: r.epoch,
                task: task_names[r.task].clone(),
                split: r.split.to_string(),
                loss: r.loss,
                accuracy: r.accuracy,
                steps: r.steps,
                seconds: if wall_clock {
                    report.wall_clock.get(r.epoch - 1).copied().unwrap_or(0.0)
                } else {
                    0.0
                },
            })
            .collect()
    }
}

/// One row of `lm_perplexity.csv`. Epoch 0 is the untrained model and has
/// no training loss.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerplexityRecord {
    pub format_version: u32,
    pub epoch: usize,
    pub heldout_perplexity: f64,
    pub train_nll: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub format_version: u32,
    pub example_id: usize,
    pub gold: usize,
    pub predicted: usize,
    pub probability: f64,
}

impl PredictionRecord {
    pub fn from_evaluation(eval: &Evaluation) -> Vec<Self> {
        eval.predictions
            .iter()
            .enumerate()
            .map(|(i, p)| PredictionRecord {
                format_version: OUTPUT_VERSION,
                example_id: i,
                gold: p.gold,
                predicted: p.predicted,
                probability: p.probability,
            })
            .collect()
    }
}

/// One traced input line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub format_version: u32,
    /// 1-based line number in the input file.
    pub line: usize,
    pub tokens: Vec<String>,
    /// Class distribution after each token.
    pub trajectory: Vec<Vec<f64>>,
    pub prediction: usize,
    /// Only shared-layer models have one.
    pub gate_trace: Option<GateTrace>,
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| write_error(dir, e))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| write_error(path, e))
}

pub fn write_json_lines<T: Serialize>(path: &Path, records: &[T]) -> CliResult<()> {
    let mut out = create(path)?;
    write_json_lines_to(&mut out, records).map_err(|e| write_error(path, e))?;
    out.flush().map_err(|e| write_error(path, e))
}

pub fn write_json_lines_to<T: Serialize>(out: &mut impl Write, records: &[T]) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut *out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn write_csv<T: Serialize>(path: &Path, records: &[T]) -> CliResult<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    for r in records {
        w.serialize(r).map_err(|e| write_error(path, e))?;
    }
    w.flush().map_err(|e| write_error(path, e))
}

/// Writes `<stem>.jsonl` and `<stem>.csv` with the same records.
pub fn write_metrics(dir: &Path, stem: &str, records: &[MetricRecord]) -> CliResult<()> {
    write_json_lines(&dir.join(format!("{stem}.jsonl")), records)?;
    write_csv(&dir.join(format!("{stem}.csv")), records)
}

pub fn write_text(path: &Path, text: &str) -> CliResult<()> {
    let mut out = create(path)?;
    out.write_all(text.as_bytes()).map_err(|e| write_error(path, e))?;
    out.flush().map_err(|e| write_error(path, e))
}
