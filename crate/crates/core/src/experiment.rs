//! Train/evaluate loop wiring dataset → scenario → optimizer → metrics.

use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bgd::{BgdOptimizer, NetworkObjective, OptimizerConfig, VariationalParams, Workers};
use crate::config::{Budget, DatasetSource, ExperimentConfig, OptimizerChoice};
use crate::data::{self, DataSplit, Dataset, SyntheticSpec};
use crate::engine::{self, Batch, FlatWeights, HeadMask, NetworkSpec};
use crate::error::{Error, Result};
use crate::metrics::{
    self, AggregateReport, Checkpoint, MetricsReport, ReportFormat, SigmaSummary,
};
use crate::scenario::{self, ScenarioConfig, TaskKind, TaskSpec, TaskStream};
use crate::sgd;
use crate::stats;
use crate::theory::{self, Claim, CurvatureFixture, LossFunction, TheoryReport};

pub const HISTOGRAM_BINS: usize = 50;

pub fn load_dataset(source: &DatasetSource) -> Result<DataSplit> {
    match source {
        DatasetSource::Synthetic(spec) => data::gen_synthetic(spec),
        DatasetSource::Idx(idx) => {
            let mut train = data::load_idx(&idx.train_images, &idx.train_labels)?;
            let mut test = data::load_idx(&idx.test_images, &idx.test_labels)?;
            if let Some(n) = idx.train_subsample {
                train = train.subsample(n, idx.subsample_seed);
            }
            if let Some(n) = idx.test_subsample {
                test = test.subsample(n, idx.subsample_seed.wrapping_add(1));
            }
            if let Some(target) = idx.pad_to {
                let side = (train.input_dim as f64).sqrt().round() as usize;
                train = train.pad_images(side, side, target)?;
                test = test.pad_images(side, side, target)?;
            }
            Ok(DataSplit { train, test })
        }
    }
}

/// Per-seed reports plus their aggregate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentOutcome {
    pub runs: Vec<MetricsReport>,
    pub aggregate: AggregateReport,
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    let data = load_dataset(&cfg.dataset)?;
    run_experiment_on(cfg, data)
}

/// Like [`run_experiment`] with the dataset already loaded.
pub fn run_experiment_on(cfg: &ExperimentConfig, data: DataSplit) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    let train = Arc::new(data.train);
    let test = data.test;
    let runs = if cfg.parallel_seeds {
        cfg.seeds
            .par_iter()
            .map(|&seed| run_seed(cfg, &train, &test, seed))
            .collect::<Result<Vec<_>>>()?
    } else {
        cfg.seeds
            .iter()
            .map(|&seed| run_seed(cfg, &train, &test, seed))
            .collect::<Result<Vec<_>>>()?
    };
    let aggregate = AggregateReport::from_runs(&cfg.label, &runs);
    Ok(ExperimentOutcome { runs, aggregate })
}

/// `seed_<n>.{json,csv}`, `seed_<n>_gnuplot/`, and `aggregate.json`.
pub fn write_outcome(outcome: &ExperimentOutcome, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for run in &outcome.runs {
        let stem = format!("seed_{}", run.seed);
        metrics::write_report(run, dir.join(format!("{stem}.json")), ReportFormat::Json)?;
        metrics::write_report(run, dir.join(format!("{stem}.csv")), ReportFormat::Csv)?;
        metrics::write_gnuplot(run, dir.join(format!("{stem}_gnuplot")))?;
    }
    let path = dir.join("aggregate.json");
    let text = serde_json::to_string_pretty(&outcome.aggregate)?;
    std::fs::write(&path, text).map_err(|e| Error::io(path, e))
}

/// Tasks with heads assigned, and the number of classes per task.
pub fn build_tasks(
    cfg: &ExperimentConfig,
    data: &Dataset,
    seed: u64,
) -> Result<(Vec<TaskSpec>, usize)> {
    let s = &cfg.scenario;
    let (mut tasks, per_task) = match s.tasks {
        TaskKind::PixelPermutation => {
            let per_task = s.classes_per_task.unwrap_or(data.num_classes);
            if per_task != data.num_classes {
                return Err(Error::Config(format!(
                    "permuted tasks use all {} classes, classes_per_task is {per_task}",
                    data.num_classes
                )));
            }
            (
                scenario::make_permuted_tasks(data.input_dim, s.num_tasks, seed)?,
                per_task,
            )
        }
        TaskKind::ClassSubset => {
            let per_task = s.classes_per_task.expect("validated");
            let tasks = scenario::make_split_tasks(data.num_classes, per_task)?;
            if tasks.len() < s.num_tasks {
                return Err(Error::Config(format!(
                    "{} classes give only {} tasks of {per_task}, {} requested",
                    data.num_classes,
                    tasks.len(),
                    s.num_tasks
                )));
            }
            (tasks.into_iter().take(s.num_tasks).collect(), per_task)
        }
    };
    scenario::assign_heads(&mut tasks, per_task, s.shared_head);
    Ok((tasks, per_task))
}

/// Iterations in one pass over an average task's training pool.
pub fn iterations_per_epoch(tasks: &[TaskSpec], data: &Dataset, batch_size: usize) -> u64 {
    let pooled: usize = tasks
        .iter()
        .map(|t| data.labels.iter().filter(|l| t.classes.contains(l)).count())
        .sum();
    let pool = pooled as f64 / tasks.len().max(1) as f64;
    ((pool / batch_size as f64).ceil() as u64).max(1)
}

enum Learner {
    Bgd(Box<BgdOptimizer>),
    Sgd { w: FlatWeights, lr: f64 },
}

impl Learner {
    fn new(choice: &OptimizerChoice, spec: &NetworkSpec, seed: u64) -> Result<Self> {
        Ok(match choice {
            OptimizerChoice::Bgd(c) => {
                let config = OptimizerConfig { seed, ..c.clone() };
                Learner::Bgd(Box::new(BgdOptimizer::new(spec, config)?))
            }
            OptimizerChoice::Sgd(c) => {
                // same initial point as the BGD means of this seed
                let init = crate::bgd::init_params(spec, &OptimizerConfig::new(1.0, seed))?;
                Learner::Sgd {
                    w: init.mu,
                    lr: c.learning_rate,
                }
            }
        })
    }

    fn train_step(&mut self, spec: &NetworkSpec, batch: &Batch, mask: &HeadMask) -> Result<()> {
        match self {
            Learner::Bgd(opt) => opt.step(&NetworkObjective { spec, batch, mask }),
            Learner::Sgd { w, lr } => {
                let (loss, grad) = engine::loss_and_gradient(spec, w, batch, mask)?;
                if !loss.is_finite() {
                    return Err(Error::NonFinite {
                        what: "training loss",
                        coordinate: 0,
                    });
                }
                *w = sgd::sgd_step(w, &grad, *lr)?;
                Ok(())
            }
        }
    }

    fn predict(&self, spec: &NetworkSpec, inputs: &[f64], rows: usize) -> Result<Vec<f64>> {
        match self {
            Learner::Bgd(opt) => opt.predict(spec, inputs, rows),
            Learner::Sgd { w, .. } => {
                let z = engine::logits(spec, w, inputs, rows)?;
                Ok(engine::softmax_rows(&z, spec.num_heads))
            }
        }
    }

    fn sigma(&self) -> Option<(&[f64], f64)> {
        match self {
            Learner::Bgd(opt) => Some((&opt.params.sigma, opt.config.sigma_init)),
            Learner::Sgd { .. } => None,
        }
    }

    fn monitor_loss(&self, spec: &NetworkSpec, batch: &Batch, mask: &HeadMask) -> Result<f64> {
        let w: &[f64] = match self {
            Learner::Bgd(opt) => &opt.params.mu,
            Learner::Sgd { w, .. } => w,
        };
        engine::loss(spec, w, batch, mask)
    }
}

/// Each task's transformed test inputs, target heads and evaluation mask.
struct TestSet {
    inputs: Vec<f64>,
    targets: Vec<usize>,
    mask: HeadMask,
}

fn build_test_sets(
    scen: &ScenarioConfig,
    tasks: &[TaskSpec],
    test: &Dataset,
) -> Result<Vec<TestSet>> {
    tasks
        .iter()
        .enumerate()
        .map(|(t, task)| {
            let mut inputs = Vec::new();
            let mut targets = Vec::new();
            for i in 0..test.len() {
                if let Some(head) = task.head_for(test.labels[i]) {
                    task.transform_into(test.row(i), &mut inputs);
                    targets.push(head);
                }
            }
            if targets.is_empty() {
                return Err(Error::Config(format!("task {t} has no test examples")));
            }
            Ok(TestSet {
                inputs,
                targets,
                mask: scenario::eval_mask(scen, task)?,
            })
        })
        .collect()
}

fn accuracy(learner: &Learner, spec: &NetworkSpec, set: &TestSet) -> Result<f64> {
    let rows = set.targets.len();
    let probs = learner.predict(spec, &set.inputs, rows)?;
    let heads = spec.num_heads;
    let correct = set
        .targets
        .iter()
        .enumerate()
        .filter(|&(r, &target)| {
            let row = &probs[r * heads..(r + 1) * heads];
            let best =
                set.mask
                    .allowed()
                    .iter()
                    .copied()
                    .fold(None::<usize>, |best, h| match best {
                        Some(b) if row[b] >= row[h] => Some(b),
                        _ => Some(h),
                    });
            best == Some(target)
        })
        .count();
    Ok(correct as f64 / rows as f64)
}

struct Recorder<'a> {
    spec: &'a NetworkSpec,
    sets: Vec<TestSet>,
    edges: Vec<f64>,
    report: MetricsReport,
}

impl Recorder<'_> {
    fn record(&mut self, learner: &Learner, checkpoint: Checkpoint) -> Result<()> {
        let accuracies = self
            .sets
            .iter()
            .map(|set| accuracy(learner, self.spec, set))
            .collect::<Result<Vec<_>>>()?;
        let index = self.report.checkpoints.len();
        log::debug!(
            "{} seed {}: iteration {} accuracies {:?}",
            self.report.label,
            self.report.seed,
            checkpoint.iteration,
            accuracies
        );
        self.report.push_checkpoint(checkpoint, accuracies)?;
        if let Some((sigma, sigma_init)) = learner.sigma() {
            let mut hist = metrics::sigma_histogram(sigma, &self.edges)?;
            hist.checkpoint = index;
            self.report.sigma_histograms.push(hist);
            self.report
                .sigma_summaries
                .push(SigmaSummary::new(index, sigma, sigma_init));
        }
        Ok(())
    }
}

/// One seed of an experiment.
pub fn run_seed(
    cfg: &ExperimentConfig,
    train: &Arc<Dataset>,
    test: &Dataset,
    seed: u64,
) -> Result<MetricsReport> {
    let (tasks, per_task) = build_tasks(cfg, train, seed)?;
    let heads = if cfg.scenario.shared_head {
        per_task
    } else {
        cfg.scenario.num_tasks * per_task
    };
    let spec = NetworkSpec {
        input_dim: train.input_dim,
        hidden_widths: cfg.network.hidden_widths.clone(),
        num_heads: heads,
        activation: cfg.network.activation,
    };
    spec.validate()?;
    let epoch = iterations_per_epoch(&tasks, train, cfg.scenario.batch_size);
    let duration = match cfg.budget {
        Budget::EpochsPerTask(e) => e * epoch,
        Budget::IterationsPerTask(n) => n,
    };
    let scen = cfg.scenario.to_config(per_task, duration, seed);
    scenario::classify_scenario(&scen)?;

    let mut learner = Learner::new(&cfg.optimizer, &spec, seed)?;
    let mut rec = Recorder {
        spec: &spec,
        sets: build_test_sets(&scen, &tasks, test)?,
        edges: metrics::default_log_edges(HISTOGRAM_BINS),
        report: MetricsReport {
            label: cfg.label.clone(),
            seed,
            ..Default::default()
        },
    };
    rec.record(
        &learner,
        Checkpoint {
            iteration: 0,
            seen: 1,
            at_boundary: false,
        },
    )?;
    if duration == 0 {
        return Ok(rec.report);
    }

    let tasks = Arc::new(tasks);
    let mut stream = TaskStream::new(scen.clone(), Arc::clone(&tasks), Arc::clone(train))?;
    let schedule = stream.schedule().clone();
    let total = scen.total_iterations();
    let mut train_time = Duration::ZERO;
    for it in 0..total {
        let started = Instant::now();
        let batch = stream.next_batch(it)?;
        let current = scen.task_id_in_train.then(|| schedule.block_task(it));
        let mask = scenario::head_mask_for_batch(&batch.labels, &scen, &tasks, current)?;
        learner
            .train_step(&spec, &batch, &mask)
            .map_err(|e| e.at_iteration(it))?;
        train_time += started.elapsed();

        let done = it + 1;
        if done % epoch == 0 {
            rec.report
                .runtime_per_epoch_seconds
                .push(train_time.as_secs_f64());
            train_time = Duration::ZERO;
            let loss = learner.monitor_loss(&spec, &batch, &mask)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite {
                    what: "loss at the posterior mean",
                    coordinate: 0,
                }
                .at_iteration(it));
            }
            log::debug!(
                "{} seed {seed}: epoch ending at {done}, batch loss {loss:.4}",
                cfg.label
            );
        }
        let at_boundary = done % duration == 0;
        if at_boundary || (cfg.eval_every > 0 && done % cfg.eval_every == 0) {
            let seen = (done.div_ceil(duration) as usize).clamp(1, scen.num_tasks);
            rec.record(
                &learner,
                Checkpoint {
                    iteration: done,
                    seen,
                    at_boundary,
                },
            )?;
        }
    }
    Ok(rec.report)
}

/// Checks exposed on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TheoryCommand {
    Theorem1,
    Corollary1,
    Curvature,
    FreeEnergy,
    RuntimeScaling,
}

impl TheoryCommand {
    pub const ALL: [TheoryCommand; 5] = [
        TheoryCommand::Theorem1,
        TheoryCommand::Corollary1,
        TheoryCommand::Curvature,
        TheoryCommand::FreeEnergy,
        TheoryCommand::RuntimeScaling,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TheoryCommand::Theorem1 => "theorem1",
            TheoryCommand::Corollary1 => "corollary1",
            TheoryCommand::Curvature => "curvature",
            TheoryCommand::FreeEnergy => "free-energy",
            TheoryCommand::RuntimeScaling => "runtime-scaling",
        }
    }
}

impl std::str::FromStr for TheoryCommand {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TheoryCommand::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| {
                let known: Vec<_> = TheoryCommand::ALL.iter().map(|c| c.name()).collect();
                Error::Config(format!(
                    "unknown theory check {s:?}; known: {}",
                    known.join(", ")
                ))
            })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TheoryOptions {
    pub seed: u64,
    pub problems: usize,
    pub dim: usize,
    pub mc_samples: usize,
    pub steps: usize,
    pub curvature_samples: usize,
    pub runtime_ks: Vec<usize>,
    pub runtime_epochs: u64,
    pub workers: usize,
}

impl Default for TheoryOptions {
    fn default() -> Self {
        TheoryOptions {
            seed: 0,
            problems: 100,
            dim: 10,
            mc_samples: 10_000,
            steps: 50,
            curvature_samples: 100_000,
            runtime_ks: vec![2, 4, 10],
            runtime_epochs: 5,
            workers: 1,
        }
    }
}

pub const CURVATURE_TOLERANCE: f64 = 0.05;
pub const RUNTIME_MIN_R2: f64 = 0.95;

pub fn run_theory(cmd: TheoryCommand, opts: &TheoryOptions) -> Result<TheoryReport> {
    match cmd {
        TheoryCommand::Theorem1 => {
            theory::theorem1_battery(opts.problems, opts.dim, opts.mc_samples, opts.seed)
        }
        TheoryCommand::Corollary1 => {
            let convex =
                theory::corollary1_battery(opts.problems, opts.dim, opts.steps, false, opts.seed)?;
            let concave =
                theory::corollary1_battery(opts.problems, opts.dim, opts.steps, true, opts.seed)?;
            let mut report = TheoryReport::new(Claim::Corollary1);
            for (prefix, part) in [("convex", convex), ("concave", concave)] {
                for (k, v) in &part.summary {
                    report.summary.insert(format!("{prefix}_{k}"), *v);
                }
                report.absorb(part);
            }
            Ok(report)
        }
        TheoryCommand::Curvature => curvature_check(opts),
        TheoryCommand::FreeEnergy => free_energy_check(opts),
        TheoryCommand::RuntimeScaling => runtime_scaling_check(opts),
    }
}

/// 4-8-4 MLP: median relative error at σ = 1e-3 below tolerance, and larger at σ = 1e-2.
pub fn curvature_check(opts: &TheoryOptions) -> Result<TheoryReport> {
    let workers = Workers::new(opts.workers)?;
    let fx = CurvatureFixture::new((4, 8, 4), 16, opts.seed)?;
    let obj = fx.objective();
    let mut small = theory::check_curvature_approx(
        &obj,
        &fx.params(1e-3),
        opts.curvature_samples,
        opts.seed,
        CURVATURE_TOLERANCE,
        &workers,
    )?;
    let large = theory::check_curvature_approx(
        &obj,
        &fx.params(1e-2),
        opts.curvature_samples,
        opts.seed,
        f64::INFINITY,
        &workers,
    )?;
    let (e_small, e_large) = (
        small.summary["median_relative_error"],
        large.summary["median_relative_error"],
    );
    small
        .summary
        .insert("median_relative_error_sigma_1e-2".into(), e_large);
    if !(e_large > e_small) {
        small.passed = false;
        small.violations += 1;
        small.notes.push(format!(
            "error did not grow with sigma: {e_small} at 1e-3, {e_large} at 1e-2"
        ));
    }
    Ok(small)
}

/// Closed-form KL oracle plus a monitoring run whose per-epoch estimate must trend downward.
pub fn free_energy_check(opts: &TheoryOptions) -> Result<TheoryReport> {
    let mut report = TheoryReport::new(Claim::FreeEnergy);
    let q = VariationalParams::new(vec![0.5, -1.0, 0.0], vec![0.8, 1.2, 0.3])?;
    let prior = VariationalParams::new(vec![0.0, 0.0, 0.2], vec![1.0, 1.0, 0.5])?;
    struct Zero;
    impl LossFunction for Zero {
        fn value(&self, _: &[f64]) -> Result<f64> {
            Ok(0.0)
        }
    }
    let fe =
        theory::free_energy_estimate(&q, &prior, &Zero, opts.curvature_samples.max(1), opts.seed)?;
    let kl = theory::diagonal_kl(&q, &prior);
    report.summary.insert("kl_exact".into(), kl);
    report.summary.insert("kl_estimate".into(), fe.estimate);
    report.summary.insert("kl_stderr".into(), fe.stderr);
    report.checked += 1;
    if (fe.estimate - kl).abs() > 3.0 * fe.stderr {
        report.fail_with(format!(
            "KL estimate {} ± {} vs exact {kl}",
            fe.estimate, fe.stderr
        ));
    }

    let split = data::gen_synthetic(&SyntheticSpec {
        num_classes: 3,
        samples_per_class: 40,
        test_samples_per_class: 1,
        input_dim: 8,
        cluster_std: 0.5,
        seed: opts.seed,
        active_dims: None,
    })?;
    let spec = NetworkSpec::new(8, vec![16], 3)?;
    let mask = HeadMask::full(3);
    let config = OptimizerConfig {
        eta: 10.0,
        ..OptimizerConfig::new(0.1, opts.seed)
    };
    let mut opt = BgdOptimizer::new(&spec, config)?;
    let batch = Batch::new(
        split.train.inputs.clone(),
        8,
        split.train.labels.clone(),
        None,
    )?;
    let mut trace = Vec::new();
    for epoch in 0..20u64 {
        let prior = opt.params.clone();
        opt.step(&NetworkObjective {
            spec: &spec,
            batch: &batch,
            mask: &mask,
        })?;
        let obj = NetworkObjective {
            spec: &spec,
            batch: &batch,
            mask: &mask,
        };
        let fe = theory::free_energy_estimate(
            &opt.params,
            &prior,
            &obj,
            200,
            opts.seed.wrapping_add(epoch),
        )?;
        trace.push(fe.estimate);
        for _ in 0..9 {
            opt.step(&obj)?;
        }
    }
    let xs: Vec<f64> = (0..trace.len()).map(|i| i as f64).collect();
    let fit = stats::linear_fit(&xs, &trace);
    report.summary.insert("monitor_slope".into(), fit.slope);
    report.summary.insert("monitor_first".into(), trace[0]);
    report
        .summary
        .insert("monitor_last".into(), trace[trace.len() - 1]);
    report.checked += 1;
    if !(fit.slope < 0.0) {
        report.fail_with(format!(
            "free energy did not trend downward: slope {}",
            fit.slope
        ));
    }
    report.inequality_margins = trace;
    Ok(report)
}

/// Per-epoch training time against the number of Monte Carlo samples.
pub fn runtime_scaling_check(opts: &TheoryOptions) -> Result<TheoryReport> {
    let mut report = TheoryReport::new(Claim::RuntimeScaling);
    let mut ks = Vec::new();
    let mut times = Vec::new();
    let data = data::gen_synthetic(&crate::presets::desk_dataset())?;
    let train = Arc::new(data.train);
    for &k in &opts.runtime_ks {
        let cfg = crate::presets::runtime_scaling(k, opts.runtime_epochs);
        let run = run_seed(&cfg, &train, &data.test, opts.seed)?;
        let t = stats::median(&run.runtime_per_epoch_seconds);
        report.summary.insert(format!("epoch_seconds_k{k}"), t);
        ks.push(k as f64);
        times.push(t);
    }
    let fit = stats::linear_fit(&ks, &times);
    report.checked = ks.len();
    report.summary.insert("slope".into(), fit.slope);
    report.summary.insert("intercept".into(), fit.intercept);
    report.summary.insert("r_squared".into(), fit.r_squared);
    if !(fit.r_squared >= RUNTIME_MIN_R2) {
        report.fail_with(format!("R² {} below {RUNTIME_MIN_R2}", fit.r_squared));
    }
    Ok(report)
}
