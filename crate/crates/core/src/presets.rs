//! Ready-made experiment configurations.
//!
//! Desk presets run on a 2,000-example synthetic dataset in minutes; the
//! `mnist_*` presets mirror the full-scale setups and need the IDX files.

use std::path::Path;

use crate::bgd::{Estimator, InferenceMode, OptimizerConfig};
use crate::config::{
    Budget, DatasetSource, ExperimentConfig, IdxSource, NetworkSection, OptimizerChoice,
    ScenarioSection, SCHEMA_VERSION,
};
use crate::data::SyntheticSpec;
use crate::error::{Error, Result};
use crate::scenario::{Boundaries, TaskKind};
use crate::sgd::SgdConfig;

pub const NAMES: &[&str] = &[
    "desk-permuted-bgd",
    "desk-permuted-sgd",
    "desk-split-bgd",
    "desk-split-bgd-labels-trick",
    "desk-split-sgd",
    "desk-split-sgd-labels-trick",
    "desk-continuous-bgd",
    "desk-continuous-sgd",
];

pub const DESK_SEEDS: [u64; 3] = [1, 2, 3];
pub const DESK_BATCH: usize = 128;
pub const DESK_HIDDEN: [usize; 2] = [100, 100];

pub fn desk_dataset() -> SyntheticSpec {
    SyntheticSpec {
        num_classes: 10,
        samples_per_class: 200,
        test_samples_per_class: 50,
        input_dim: 64,
        cluster_std: 0.5,
        seed: 0,
        active_dims: Some(32),
    }
}

pub const DESK_SIGMA: f64 = 0.06;
pub const DESK_ETA: f64 = 0.1;
/// Likelihood weight on the batch loss; `DESK_LOSS_SCALE · DESK_SIGMA²` ≈ 1.
pub const DESK_LOSS_SCALE: f64 = 300.0;

/// Split-task BGD runs at unit loss scale.
pub const DESK_SPLIT_SIGMA: f64 = 0.017;
pub const DESK_SPLIT_ETA: f64 = 100.0;

/// Full-scale initial STDs.
pub const MNIST_SIGMA: f64 = 0.06;
pub const MNIST_SPLIT_SIGMA: f64 = 0.017;

pub fn desk_bgd_config() -> OptimizerConfig {
    OptimizerConfig {
        eta: DESK_ETA,
        loss_scale: DESK_LOSS_SCALE,
        estimator: Estimator::Centered,
        ..OptimizerConfig::new(DESK_SIGMA, 0)
    }
}

pub fn desk_bgd() -> OptimizerChoice {
    OptimizerChoice::Bgd(desk_bgd_config())
}

pub fn desk_split_bgd() -> OptimizerChoice {
    OptimizerChoice::Bgd(OptimizerConfig {
        eta: DESK_SPLIT_ETA,
        estimator: Estimator::Centered,
        ..OptimizerConfig::new(DESK_SPLIT_SIGMA, 0)
    })
}

/// The step BGD initially takes on the mean: `η · loss_scale · σ₀²`.
pub fn matched_learning_rate(cfg: &OptimizerConfig) -> f64 {
    cfg.eta * cfg.loss_scale * cfg.sigma_init * cfg.sigma_init
}

/// Plain SGD at the desk BGD's initial mean step.
pub fn desk_sgd() -> OptimizerChoice {
    OptimizerChoice::Sgd(SgdConfig {
        learning_rate: matched_learning_rate(&desk_bgd_config()),
    })
}

fn base(
    label: &str,
    optimizer: OptimizerChoice,
    scenario: ScenarioSection,
    budget: Budget,
) -> ExperimentConfig {
    ExperimentConfig {
        schema_version: SCHEMA_VERSION,
        label: label.to_string(),
        seeds: DESK_SEEDS.to_vec(),
        eval_every: 0,
        output_dir: None,
        parallel_seeds: false,
        budget,
        scenario,
        network: NetworkSection {
            hidden_widths: DESK_HIDDEN.to_vec(),
            activation: Default::default(),
        },
        optimizer,
        dataset: DatasetSource::Synthetic(desk_dataset()),
    }
}

/// Five permuted tasks, abrupt unsignalled switches, shared head, 20 epochs per task.
pub fn desk_permuted(optimizer: OptimizerChoice) -> ExperimentConfig {
    let label = format!("desk-permuted-{}", optimizer.name());
    base(
        &label,
        optimizer,
        ScenarioSection {
            tasks: TaskKind::PixelPermutation,
            boundaries: Boundaries::Defined,
            task_id_in_train: false,
            task_id_in_test: false,
            shared_head: true,
            labels_trick: false,
            num_tasks: 5,
            classes_per_task: None,
            transition_window: 0,
            batch_size: DESK_BATCH,
        },
        Budget::EpochsPerTask(20),
    )
}

/// Class learning on five two-class tasks with separate heads.
pub fn desk_split(optimizer: OptimizerChoice, labels_trick: bool) -> ExperimentConfig {
    let label = format!(
        "desk-split-{}{}",
        optimizer.name(),
        if labels_trick { "-labels-trick" } else { "" }
    );
    base(
        &label,
        optimizer,
        ScenarioSection {
            tasks: TaskKind::ClassSubset,
            boundaries: Boundaries::Defined,
            task_id_in_train: true,
            task_id_in_test: false,
            shared_head: false,
            labels_trick,
            num_tasks: 5,
            classes_per_task: Some(2),
            transition_window: 0,
            batch_size: DESK_BATCH,
        },
        Budget::EpochsPerTask(20),
    )
}

/// Three permuted tasks blended by linear cross-fades; no boundary or task information.
pub fn desk_continuous(optimizer: OptimizerChoice) -> ExperimentConfig {
    let label = format!("desk-continuous-{}", optimizer.name());
    base(
        &label,
        optimizer,
        ScenarioSection {
            tasks: TaskKind::PixelPermutation,
            boundaries: Boundaries::Undefined,
            task_id_in_train: false,
            task_id_in_test: false,
            shared_head: true,
            labels_trick: false,
            num_tasks: 3,
            classes_per_task: None,
            transition_window: 100,
            batch_size: DESK_BATCH,
        },
        Budget::IterationsPerTask(320),
    )
}

/// One permuted task for timing epochs at `k` Monte Carlo samples.
pub fn runtime_scaling(k: usize, epochs: u64) -> ExperimentConfig {
    let mut cfg = desk_permuted(OptimizerChoice::Bgd(OptimizerConfig {
        mc_samples: k,
        inference_mode: InferenceMode::Map,
        ..OptimizerConfig::new(DESK_SIGMA, 0)
    }));
    cfg.label = format!("runtime-k{k}");
    cfg.seeds = vec![1];
    cfg.scenario.num_tasks = 1;
    cfg.budget = Budget::EpochsPerTask(epochs);
    cfg
}

pub fn by_name(name: &str) -> Result<ExperimentConfig> {
    Ok(match name {
        "desk-permuted-bgd" => desk_permuted(desk_bgd()),
        "desk-permuted-sgd" => desk_permuted(desk_sgd()),
        "desk-split-bgd" => desk_split(desk_split_bgd(), false),
        "desk-split-bgd-labels-trick" => desk_split(desk_split_bgd(), true),
        "desk-split-sgd" => desk_split(desk_sgd(), false),
        "desk-split-sgd-labels-trick" => desk_split(desk_sgd(), true),
        "desk-continuous-bgd" => desk_continuous(desk_bgd()),
        "desk-continuous-sgd" => desk_continuous(desk_sgd()),
        other => {
            return Err(Error::Config(format!(
                "unknown preset {other:?}; known: {}",
                NAMES.join(", ")
            )))
        }
    })
}

fn mnist_source(dir: &Path, pad_to: Option<usize>) -> DatasetSource {
    DatasetSource::Idx(IdxSource {
        train_images: dir.join("train-images-idx3-ubyte"),
        train_labels: dir.join("train-labels-idx1-ubyte"),
        test_images: dir.join("t10k-images-idx3-ubyte"),
        test_labels: dir.join("t10k-labels-idx1-ubyte"),
        train_subsample: None,
        test_subsample: None,
        pad_to,
        subsample_seed: 0,
    })
}

/// Single-task MNIST classification, two hidden layers of 400.
pub fn mnist_classification(dir: &Path, epochs: u64) -> ExperimentConfig {
    let mut cfg = desk_permuted(OptimizerChoice::Bgd(OptimizerConfig::new(MNIST_SIGMA, 0)));
    cfg.label = "mnist-classification-bgd".into();
    cfg.seeds = vec![1];
    cfg.scenario.num_tasks = 1;
    cfg.network.hidden_widths = vec![400, 400];
    cfg.budget = Budget::EpochsPerTask(epochs);
    cfg.dataset = mnist_source(dir, None);
    cfg
}

/// Split-MNIST class learning with the labels trick: 4 epochs per task, padded to 32×32.
pub fn mnist_split_labels_trick(dir: &Path) -> ExperimentConfig {
    let mut cfg = desk_split(
        OptimizerChoice::Bgd(OptimizerConfig::new(MNIST_SPLIT_SIGMA, 0)),
        true,
    );
    cfg.label = "mnist-split-bgd-labels-trick".into();
    cfg.seeds = (2019..=2028).collect();
    cfg.network.hidden_widths = vec![400, 400];
    cfg.budget = Budget::EpochsPerTask(4);
    cfg.dataset = mnist_source(dir, Some(32));
    cfg
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate_and_round_trip() {
        for name in NAMES {
            let cfg = by_name(name).unwrap();
            assert_eq!(&cfg.label, name);
            cfg.validate().unwrap();
            let text = cfg.to_toml_string().unwrap();
            assert_eq!(ExperimentConfig::from_toml_str(&text).unwrap(), cfg);
        }
        assert!(by_name("nope").is_err());
        runtime_scaling(4, 3).validate().unwrap();
        mnist_classification(Path::new("/data"), 1)
            .validate()
            .unwrap();
        mnist_split_labels_trick(Path::new("/data"))
            .validate()
            .unwrap();
    }
}
