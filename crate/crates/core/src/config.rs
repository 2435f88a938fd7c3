//! Versioned TOML experiment configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bgd::OptimizerConfig;
use crate::data::SyntheticSpec;
use crate::engine::Activation;
use crate::error::{Error, Result};
use crate::scenario::{Boundaries, ScenarioConfig, TaskKind};
use crate::sgd::SgdConfig;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub label: String,
    pub seeds: Vec<u64>,
    /// Evaluate every this many iterations (0: only at init and task boundaries).
    pub eval_every: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    /// Run the seeds concurrently.
    #[serde(default)]
    pub parallel_seeds: bool,
    pub budget: Budget,
    pub scenario: ScenarioSection,
    pub network: NetworkSection,
    pub optimizer: OptimizerChoice,
    pub dataset: DatasetSource,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Budget {
    /// Passes over one task's training pool, per task.
    EpochsPerTask(u64),
    IterationsPerTask(u64),
}

/// `ScenarioConfig` without the per-run fields (duration comes from the
/// budget, seed from the run).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSection {
    pub tasks: TaskKind,
    pub boundaries: Boundaries,
    pub task_id_in_train: bool,
    pub task_id_in_test: bool,
    pub shared_head: bool,
    #[serde(default)]
    pub labels_trick: bool,
    pub num_tasks: usize,
    /// Required for class-subset tasks; permuted tasks use every class.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub classes_per_task: Option<usize>,
    #[serde(default)]
    pub transition_window: u64,
    pub batch_size: usize,
}

impl ScenarioSection {
    pub fn to_config(
        &self,
        classes_per_task: usize,
        duration_per_task: u64,
        seed: u64,
    ) -> ScenarioConfig {
        ScenarioConfig {
            boundaries: self.boundaries,
            task_id_in_train: self.task_id_in_train,
            task_id_in_test: self.task_id_in_test,
            shared_head: self.shared_head,
            labels_trick: self.labels_trick,
            num_tasks: self.num_tasks,
            classes_per_task,
            duration_per_task,
            transition_window: self.transition_window,
            batch_size: self.batch_size,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSection {
    pub hidden_widths: Vec<usize>,
    #[serde(default)]
    pub activation: Activation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerChoice {
    Bgd(OptimizerConfig),
    Sgd(SgdConfig),
}

impl OptimizerChoice {
    pub fn name(&self) -> &'static str {
        match self {
            OptimizerChoice::Bgd(_) => "bgd",
            OptimizerChoice::Sgd(_) => "sgd",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DatasetSource {
    Synthetic(SyntheticSpec),
    Idx(IdxSource),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdxSource {
    pub train_images: PathBuf,
    pub train_labels: PathBuf,
    pub test_images: PathBuf,
    pub test_labels: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_subsample: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_subsample: Option<usize>,
    /// Zero-pad square images to `pad_to × pad_to`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pad_to: Option<usize>,
    #[serde(default)]
    pub subsample_seed: u64,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must not be empty".into()));
        }
        if self.network.hidden_widths.contains(&0) {
            return Err(Error::Config("hidden widths must be positive".into()));
        }
        let s = &self.scenario;
        if s.num_tasks == 0 || s.batch_size == 0 {
            return Err(Error::Config(
                "num_tasks and batch_size must be positive".into(),
            ));
        }
        match (s.tasks, s.classes_per_task) {
            (TaskKind::ClassSubset, None) => {
                return Err(Error::Config(
                    "class_subset tasks need classes_per_task".into(),
                ))
            }
            (_, Some(0)) => return Err(Error::Config("classes_per_task must be positive".into())),
            _ => {}
        }
        match &self.optimizer {
            OptimizerChoice::Bgd(c) => c.validate()?,
            OptimizerChoice::Sgd(c) => c.validate()?,
        }
        if let DatasetSource::Synthetic(spec) = &self.dataset {
            spec.validate()?;
        }
        Ok(())
    }

    pub fn output_dir(&self, root: Option<&Path>) -> PathBuf {
        let dir = self
            .output_dir
            .clone()
            .unwrap_or_else(|| PathBuf::from(&self.label));
        match root {
            Some(root) if dir.is_relative() => root.join(dir),
            _ => dir,
        }
    }
}
