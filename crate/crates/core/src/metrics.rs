//! Continual-learning metrics and report serialization.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub iteration: u64,
    /// Number of tasks that have started by this iteration.
    pub seen: usize,
    /// Recorded at a true task boundary (or the end of training).
    pub at_boundary: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SigmaHistogram {
    pub checkpoint: usize,
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
    /// Some values fell outside `[edges[0], edges[last]]` and were put in the edge bins.
    pub clamped: bool,
}

impl SigmaHistogram {
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// Exact order statistics of the posterior STDs at one checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SigmaSummary {
    pub checkpoint: usize,
    pub median: f64,
    pub min: f64,
    pub max: f64,
    /// Fraction of entries below half the initial STD.
    pub fraction_below_half_init: f64,
}

impl SigmaSummary {
    pub fn new(checkpoint: usize, sigma: &[f64], sigma_init: f64) -> Self {
        SigmaSummary {
            checkpoint,
            median: crate::stats::median(sigma),
            min: sigma.iter().copied().fold(f64::INFINITY, f64::min),
            max: sigma.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            fraction_below_half_init: fraction_below(sigma, 0.5 * sigma_init),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricsReport {
    pub label: String,
    pub seed: u64,
    pub checkpoints: Vec<Checkpoint>,
    /// `[checkpoint][task]`, each in `[0, 1]`.
    pub per_task_accuracy: Vec<Vec<f64>>,
    pub avg_seen_accuracy: Vec<f64>,
    pub sigma_histograms: Vec<SigmaHistogram>,
    #[serde(default)]
    pub sigma_summaries: Vec<SigmaSummary>,
    pub runtime_per_epoch_seconds: Vec<f64>,
}

impl MetricsReport {
    pub fn final_avg_accuracy(&self) -> Option<f64> {
        self.avg_seen_accuracy.last().copied()
    }

    pub fn num_tasks(&self) -> usize {
        self.per_task_accuracy.first().map_or(0, Vec::len)
    }

    /// Appends a checkpoint row and its average over the seen tasks.
    pub fn push_checkpoint(&mut self, checkpoint: Checkpoint, accuracies: Vec<f64>) -> Result<()> {
        let avg = avg_accuracy_seen(&accuracies, checkpoint.seen.max(1))?;
        self.checkpoints.push(checkpoint);
        self.per_task_accuracy.push(accuracies);
        self.avg_seen_accuracy.push(avg);
        Ok(())
    }
}

/// Mean ± STD over seeds of the same experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub label: String,
    pub seeds: Vec<u64>,
    pub final_avg_accuracy_mean: f64,
    pub final_avg_accuracy_std: f64,
    pub final_per_task_mean: Vec<f64>,
    pub final_per_task_std: Vec<f64>,
    pub forgetting_gap_mean: Vec<f64>,
}

impl AggregateReport {
    pub fn from_runs(label: &str, runs: &[MetricsReport]) -> Self {
        let finals: Vec<f64> = runs
            .iter()
            .filter_map(MetricsReport::final_avg_accuracy)
            .collect();
        let tasks = runs.first().map_or(0, MetricsReport::num_tasks);
        let column = |f: &dyn Fn(&MetricsReport) -> Option<f64>| -> Vec<f64> {
            runs.iter().filter_map(f).collect()
        };
        let mut per_task_mean = Vec::with_capacity(tasks);
        let mut per_task_std = Vec::with_capacity(tasks);
        let mut gap_mean = Vec::with_capacity(tasks);
        for t in 0..tasks {
            let finals = column(&|r| r.per_task_accuracy.last().map(|row| row[t]));
            per_task_mean.push(stats::mean(&finals));
            per_task_std.push(stats::std_dev(&finals));
            let gaps = column(&|r| forgetting_gap(&r.per_task_accuracy).ok().map(|g| g[t]));
            gap_mean.push(stats::mean(&gaps));
        }
        AggregateReport {
            label: label.to_string(),
            seeds: runs.iter().map(|r| r.seed).collect(),
            final_avg_accuracy_mean: stats::mean(&finals),
            final_avg_accuracy_std: stats::std_dev(&finals),
            final_per_task_mean: per_task_mean,
            final_per_task_std: per_task_std,
            forgetting_gap_mean: gap_mean,
        }
    }
}

pub fn avg_accuracy_seen(per_task: &[f64], seen: usize) -> Result<f64> {
    if seen == 0 || seen > per_task.len() {
        return Err(Error::Config(format!(
            "cannot average {seen} seen tasks out of {}",
            per_task.len()
        )));
    }
    Ok(per_task[..seen].iter().sum::<f64>() / seen as f64)
}

/// `bins` logarithmically spaced bins covering `[1e-5, 1]`.
pub fn default_log_edges(bins: usize) -> Vec<f64> {
    let (lo, hi) = (-5.0f64, 0.0f64);
    (0..=bins)
        .map(|i| 10f64.powf(lo + (hi - lo) * i as f64 / bins as f64))
        .collect()
}

pub fn sigma_histogram(sigma: &[f64], edges: &[f64]) -> Result<SigmaHistogram> {
    if edges.len() < 2 || edges.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Config(
            "histogram edges must be strictly increasing".into(),
        ));
    }
    let last = edges.len() - 2;
    let mut counts = vec![0u64; edges.len() - 1];
    let mut clamped = false;
    for &s in sigma {
        let bin = if s < edges[0] {
            clamped = true;
            0
        } else if s > edges[edges.len() - 1] {
            clamped = true;
            last
        } else {
            // first edge strictly above s, minus one; the top edge closes the last bin
            edges
                .partition_point(|&e| e <= s)
                .saturating_sub(1)
                .min(last)
        };
        counts[bin] += 1;
    }
    if clamped {
        log::warn!(
            "sigma values outside [{}, {}] were clamped into the edge bins",
            edges[0],
            edges[edges.len() - 1]
        );
    }
    Ok(SigmaHistogram {
        checkpoint: 0,
        edges: edges.to_vec(),
        counts,
        clamped,
    })
}

pub fn fraction_below(sigma: &[f64], threshold: f64) -> f64 {
    if sigma.is_empty() {
        return 0.0;
    }
    sigma.iter().filter(|&&s| s < threshold).count() as f64 / sigma.len() as f64
}

/// Per task: best accuracy seen at any checkpoint minus the final accuracy.
pub fn forgetting_gap(acc: &[Vec<f64>]) -> Result<Vec<f64>> {
    if acc.len() < 2 {
        return Err(Error::Config(
            "forgetting gap needs at least two checkpoints".into(),
        ));
    }
    let last = &acc[acc.len() - 1];
    Ok((0..last.len())
        .map(|t| {
            let best = acc
                .iter()
                .map(|row| row[t])
                .fold(f64::NEG_INFINITY, f64::max);
            best - last[t]
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Csv,
    Json,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
struct CsvRow {
    kind: String,
    checkpoint: Option<usize>,
    iteration: Option<u64>,
    task: Option<usize>,
    value: f64,
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

/// CSV: one `accuracy` row per (checkpoint, task), then summary rows
/// (`avg_seen` per checkpoint, `forgetting_gap` per task, `runtime_per_epoch`
/// per epoch). JSON mirrors the whole report.
pub fn write_report(
    report: &MetricsReport,
    path: impl AsRef<Path>,
    format: ReportFormat,
) -> Result<()> {
    let path = path.as_ref();
    match format {
        ReportFormat::Json => {
            let mut out = create(path)?;
            serde_json::to_writer_pretty(&mut out, report)?;
            out.flush().map_err(|e| Error::io(path, e))
        }
        ReportFormat::Csv => {
            let mut w = csv::WriterBuilder::new()
                .has_headers(false)
                .from_writer(create(path)?);
            w.write_record(["kind", "checkpoint", "iteration", "task", "value"])?;
            for (c, (cp, row)) in report
                .checkpoints
                .iter()
                .zip(&report.per_task_accuracy)
                .enumerate()
            {
                for (t, &acc) in row.iter().enumerate() {
                    w.serialize(CsvRow {
                        kind: "accuracy".into(),
                        checkpoint: Some(c),
                        iteration: Some(cp.iteration),
                        task: Some(t),
                        value: acc,
                    })?;
                }
            }
            for (c, (cp, &avg)) in report
                .checkpoints
                .iter()
                .zip(&report.avg_seen_accuracy)
                .enumerate()
            {
                w.serialize(CsvRow {
                    kind: "avg_seen".into(),
                    checkpoint: Some(c),
                    iteration: Some(cp.iteration),
                    task: None,
                    value: avg,
                })?;
            }
            if let Ok(gaps) = forgetting_gap(&report.per_task_accuracy) {
                for (t, gap) in gaps.into_iter().enumerate() {
                    w.serialize(CsvRow {
                        kind: "forgetting_gap".into(),
                        checkpoint: None,
                        iteration: None,
                        task: Some(t),
                        value: gap,
                    })?;
                }
            }
            for (e, &secs) in report.runtime_per_epoch_seconds.iter().enumerate() {
                w.serialize(CsvRow {
                    kind: "runtime_per_epoch".into(),
                    checkpoint: Some(e),
                    iteration: None,
                    task: None,
                    value: secs,
                })?;
            }
            w.flush().map_err(|e| Error::io(path, e))
        }
    }
}

pub fn read_report_json(path: impl AsRef<Path>) -> Result<MetricsReport> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_reader(std::io::BufReader::new(file))?)
}

/// Whitespace-separated columns for gnuplot: `accuracy.dat` holds
/// `iteration avg_seen acc_0 … acc_T`, `sigma_hist.dat` one block per
/// histogram with `lower upper count` lines.
pub fn write_gnuplot(report: &MetricsReport, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join("accuracy.dat");
    let mut out = create(&path)?;
    let io = |e| Error::io(&path, e);
    writeln!(out, "# iteration avg_seen per-task accuracies").map_err(io)?;
    for ((cp, avg), row) in report
        .checkpoints
        .iter()
        .zip(&report.avg_seen_accuracy)
        .zip(&report.per_task_accuracy)
    {
        let cols: Vec<String> = row.iter().map(|a| a.to_string()).collect();
        writeln!(out, "{} {} {}", cp.iteration, avg, cols.join(" ")).map_err(io)?;
    }
    out.flush().map_err(io)?;

    let path = dir.join("sigma_hist.dat");
    let mut out = create(&path)?;
    let io = |e| Error::io(&path, e);
    for h in &report.sigma_histograms {
        writeln!(out, "# checkpoint {}", h.checkpoint).map_err(io)?;
        for (i, count) in h.counts.iter().enumerate() {
            writeln!(out, "{} {} {}", h.edges[i], h.edges[i + 1], count).map_err(io)?;
        }
        writeln!(out, "\n").map_err(io)?;
    }
    out.flush().map_err(io)
}
