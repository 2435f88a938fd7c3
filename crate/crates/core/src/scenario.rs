//! Continual-learning task streams.
//!
//! A scenario is fixed by four answers: are task boundaries defined, is the
//! task identity known while training, is it known at test time, and do the
//! tasks share one output head. [`classify_scenario`] maps the answers onto
//! the five scenario kinds; [`TaskStream`] turns a configuration plus a base
//! dataset into the batch sequence the learner sees.

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::engine::{Batch, HeadMask};
use crate::error::{Error, Result};
use crate::rng::{self, Domain};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Boundaries {
    Defined,
    Undefined,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    TaskLearning,
    DomainLearning,
    ClassLearning,
    DiscreteTaskAgnostic,
    ContinuousTaskAgnostic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    PixelPermutation,
    ClassSubset,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub boundaries: Boundaries,
    pub task_id_in_train: bool,
    pub task_id_in_test: bool,
    pub shared_head: bool,
    #[serde(default)]
    pub labels_trick: bool,
    pub num_tasks: usize,
    pub classes_per_task: usize,
    pub duration_per_task: u64,
    #[serde(default)]
    pub transition_window: u64,
    pub batch_size: usize,
    #[serde(default)]
    pub seed: u64,
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_tasks == 0 || self.classes_per_task == 0 || self.batch_size == 0 {
            return Err(Error::Config(
                "num_tasks, classes_per_task and batch_size must be positive".into(),
            ));
        }
        if self.boundaries == Boundaries::Undefined
            && self.transition_window >= self.duration_per_task
        {
            return Err(Error::Config(format!(
                "transition window {} must be shorter than the task duration {}",
                self.transition_window, self.duration_per_task
            )));
        }
        classify_scenario(self).map(|_| ())
    }

    pub fn num_heads(&self) -> usize {
        if self.shared_head {
            self.classes_per_task
        } else {
            self.num_tasks * self.classes_per_task
        }
    }

    pub fn total_iterations(&self) -> u64 {
        self.num_tasks as u64 * self.duration_per_task
    }

    pub fn schedule(&self) -> MixtureSchedule {
        build_schedule(self)
    }
}

/// Walk the scenario decision tree.
pub fn classify_scenario(cfg: &ScenarioConfig) -> Result<ScenarioKind> {
    match cfg.boundaries {
        Boundaries::Undefined => {
            if cfg.task_id_in_train || cfg.task_id_in_test {
                return Err(Error::Config(
                    "task identity cannot be known when task boundaries are undefined".into(),
                ));
            }
            Ok(ScenarioKind::ContinuousTaskAgnostic)
        }
        Boundaries::Defined if !cfg.task_id_in_train => {
            if cfg.task_id_in_test {
                return Err(Error::Config(
                    "task identity known at test time but not during training".into(),
                ));
            }
            Ok(ScenarioKind::DiscreteTaskAgnostic)
        }
        Boundaries::Defined if cfg.task_id_in_test => Ok(ScenarioKind::TaskLearning),
        Boundaries::Defined if cfg.shared_head => Ok(ScenarioKind::DomainLearning),
        Boundaries::Defined => Ok(ScenarioKind::ClassLearning),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub kind: TaskKind,
    /// Input permutation for pixel tasks (`x'[j] = x[permutation[j]]`),
    /// the owned classes for class-subset tasks.
    pub permutation: Vec<usize>,
    /// Base-dataset classes this task draws from.
    pub classes: Vec<usize>,
    /// Output head for each entry of `classes`.
    pub head_range: Vec<usize>,
}

impl TaskSpec {
    pub fn transform_into(&self, input: &[f64], out: &mut Vec<f64>) {
        match self.kind {
            TaskKind::PixelPermutation => out.extend(self.permutation.iter().map(|&j| input[j])),
            TaskKind::ClassSubset => out.extend_from_slice(input),
        }
    }

    pub fn transform(&self, input: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(input.len());
        self.transform_into(input, &mut out);
        out
    }

    /// Output head of a base-dataset class, if this task owns it.
    pub fn head_for(&self, class: usize) -> Option<usize> {
        self.classes
            .iter()
            .position(|&c| c == class)
            .map(|i| self.head_range[i])
    }
}

/// Identity for task 0, independent uniform permutations after that.
///
/// Head ranges are left empty; see [`assign_heads`].
pub fn make_permuted_tasks(input_dim: usize, num_tasks: usize, seed: u64) -> Result<Vec<TaskSpec>> {
    if num_tasks == 0 {
        return Err(Error::Config("at least one task is required".into()));
    }
    Ok((0..num_tasks)
        .map(|t| {
            let mut permutation: Vec<usize> = (0..input_dim).collect();
            if t > 0 {
                let mut rng = rng::stream(seed, Domain::Stream, 1, t as u64);
                permutation.shuffle(&mut rng);
            }
            TaskSpec {
                kind: TaskKind::PixelPermutation,
                permutation,
                classes: Vec::new(),
                head_range: Vec::new(),
            }
        })
        .collect())
}

/// Task `i` owns classes `i·C … i·C + C − 1`, mapped to the same head indices.
pub fn make_split_tasks(num_classes: usize, classes_per_task: usize) -> Result<Vec<TaskSpec>> {
    if classes_per_task == 0 || !num_classes.is_multiple_of(classes_per_task) {
        return Err(Error::Config(format!(
            "{classes_per_task} classes per task does not divide {num_classes} classes"
        )));
    }
    Ok((0..num_classes / classes_per_task)
        .map(|t| {
            let classes: Vec<usize> = (t * classes_per_task..(t + 1) * classes_per_task).collect();
            TaskSpec {
                kind: TaskKind::ClassSubset,
                permutation: classes.clone(),
                head_range: classes.clone(),
                classes,
            }
        })
        .collect())
}

/// Fill in `classes`/`head_range` for the configured head layout.
///
/// Pixel tasks cover every base class; class-subset tasks keep their classes.
/// A shared head maps each task's classes onto heads `0..C`, separate heads
/// onto `t·C..(t+1)·C`.
pub fn assign_heads(tasks: &mut [TaskSpec], classes_per_task: usize, shared_head: bool) {
    for (t, task) in tasks.iter_mut().enumerate() {
        if task.kind == TaskKind::PixelPermutation {
            task.classes = (0..classes_per_task).collect();
        }
        let base = if shared_head { 0 } else { t * classes_per_task };
        task.head_range = (base..base + task.classes.len()).collect();
    }
}

/// Probability of drawing each task, as a function of the iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureSchedule {
    num_tasks: usize,
    duration: u64,
    /// Linear cross-fade width around each boundary; zero means abrupt switches.
    window: u64,
}

pub fn build_schedule(cfg: &ScenarioConfig) -> MixtureSchedule {
    MixtureSchedule {
        num_tasks: cfg.num_tasks,
        duration: cfg.duration_per_task.max(1),
        window: match cfg.boundaries {
            Boundaries::Defined => 0,
            Boundaries::Undefined => cfg.transition_window,
        },
    }
}

impl MixtureSchedule {
    pub fn new(num_tasks: usize, duration: u64, window: u64) -> Self {
        MixtureSchedule {
            num_tasks,
            duration: duration.max(1),
            window,
        }
    }

    /// The task that owns `iteration` when boundaries are abrupt.
    pub fn block_task(&self, iteration: u64) -> usize {
        ((iteration / self.duration) as usize).min(self.num_tasks - 1)
    }

    pub fn weights(&self, iteration: u64) -> Vec<f64> {
        let mut w = vec![0.0; self.num_tasks];
        let t = self.block_task(iteration);
        if self.window > 0 {
            let half = self.window as f64 / 2.0;
            let it = iteration as f64;
            // nearest boundary between task b-1 and task b
            let b =
                ((it / self.duration as f64).round() as usize).clamp(1, self.num_tasks.max(2) - 1);
            if b < self.num_tasks {
                let boundary = (b as u64 * self.duration) as f64;
                if (it - boundary).abs() <= half {
                    let previous = ((boundary + half - it) / self.window as f64).clamp(0.0, 1.0);
                    w[b - 1] = previous;
                    w[b] = 1.0 - previous;
                    return w;
                }
            }
        }
        w[t] = 1.0;
        w
    }
}

/// Batches drawn from a drifting mixture over tasks.
///
/// Every example first draws its task from the schedule weights, then an
/// example of that task uniformly with replacement.
pub struct TaskStream {
    cfg: ScenarioConfig,
    tasks: Arc<Vec<TaskSpec>>,
    data: Arc<Dataset>,
    pools: Vec<Vec<usize>>,
    schedule: MixtureSchedule,
    rng: ChaCha8Rng,
}

impl TaskStream {
    pub fn new(cfg: ScenarioConfig, tasks: Arc<Vec<TaskSpec>>, data: Arc<Dataset>) -> Result<Self> {
        cfg.validate()?;
        if tasks.len() != cfg.num_tasks {
            return Err(Error::Config(format!(
                "{} tasks built for a scenario of {}",
                tasks.len(),
                cfg.num_tasks
            )));
        }
        let pools = tasks
            .iter()
            .enumerate()
            .map(|(t, task)| {
                let pool: Vec<usize> = (0..data.len())
                    .filter(|&i| task.classes.contains(&data.labels[i]))
                    .collect();
                if pool.is_empty() {
                    Err(Error::Config(format!("task {t} has no training examples")))
                } else {
                    Ok(pool)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let schedule = build_schedule(&cfg);
        let rng = rng::stream(cfg.seed, Domain::Stream, 0, 0);
        Ok(TaskStream {
            cfg,
            tasks,
            data,
            pools,
            schedule,
            rng,
        })
    }

    pub fn config(&self) -> &ScenarioConfig {
        &self.cfg
    }

    pub fn schedule(&self) -> &MixtureSchedule {
        &self.schedule
    }

    pub fn tasks(&self) -> &[TaskSpec] {
        &self.tasks
    }

    pub fn next_batch(&mut self, iteration: u64) -> Result<Batch> {
        let total = self.cfg.total_iterations();
        if iteration >= total {
            return Err(Error::EndOfStream { iteration, total });
        }
        let weights = self.schedule.weights(iteration);
        let n = self.cfg.batch_size;
        let dim = self.data.input_dim;
        let mut inputs = Vec::with_capacity(n * dim);
        let mut labels = Vec::with_capacity(n);
        let mut tags = Vec::with_capacity(n);
        for _ in 0..n {
            let task = sample_categorical(&weights, self.rng.random::<f64>());
            let pool = &self.pools[task];
            let example = pool[self.rng.random_range(0..pool.len())];
            let spec = &self.tasks[task];
            spec.transform_into(self.data.row(example), &mut inputs);
            let head = spec
                .head_for(self.data.labels[example])
                .expect("pool only holds classes owned by the task");
            labels.push(head);
            tags.push(task);
        }
        let tags = self.cfg.task_id_in_train.then_some(tags);
        Batch::new(inputs, dim, labels, tags)
    }
}

fn sample_categorical(weights: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, &w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    weights.iter().rposition(|&w| w > 0.0).unwrap_or(0)
}

/// Heads trained on a batch.
///
/// Shared head: all `C` heads. Task learning with a known current task: that
/// task's heads. Separate heads with the labels trick: exactly the labels in
/// the batch. Otherwise all `T·C` heads.
pub fn head_mask_for_batch(
    labels: &[usize],
    cfg: &ScenarioConfig,
    tasks: &[TaskSpec],
    current_task: Option<usize>,
) -> Result<HeadMask> {
    if labels.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let heads = cfg.num_heads();
    if cfg.shared_head {
        return Ok(HeadMask::full(heads));
    }
    if let (ScenarioKind::TaskLearning, Some(t)) = (classify_scenario(cfg)?, current_task) {
        let task = tasks
            .get(t)
            .ok_or_else(|| Error::Config(format!("current task {t} out of range")))?;
        return HeadMask::new(task.head_range.iter().copied(), heads);
    }
    if cfg.labels_trick {
        return HeadMask::new(labels.iter().copied(), heads);
    }
    Ok(HeadMask::full(heads))
}

/// Heads considered when evaluating `task` at test time.
pub fn eval_mask(cfg: &ScenarioConfig, task: &TaskSpec) -> Result<HeadMask> {
    if cfg.task_id_in_test {
        HeadMask::new(task.head_range.iter().copied(), cfg.num_heads())
    } else {
        Ok(HeadMask::full(cfg.num_heads()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cfg(boundaries: Boundaries, train: bool, test: bool, shared: bool) -> ScenarioConfig {
        ScenarioConfig {
            boundaries,
            task_id_in_train: train,
            task_id_in_test: test,
            shared_head: shared,
            labels_trick: false,
            num_tasks: 2,
            classes_per_task: 2,
            duration_per_task: 100,
            transition_window: 40,
            batch_size: 16,
            seed: 1,
        }
    }

    #[test]
    fn decision_tree() {
        use Boundaries::*;
        use ScenarioKind::*;
        assert_eq!(
            classify_scenario(&cfg(Defined, true, true, false)).unwrap(),
            TaskLearning
        );
        assert_eq!(
            classify_scenario(&cfg(Defined, true, false, true)).unwrap(),
            DomainLearning
        );
        assert_eq!(
            classify_scenario(&cfg(Defined, true, false, false)).unwrap(),
            ClassLearning
        );
        assert_eq!(
            classify_scenario(&cfg(Defined, false, false, true)).unwrap(),
            DiscreteTaskAgnostic
        );
        assert_eq!(
            classify_scenario(&cfg(Undefined, false, false, true)).unwrap(),
            ContinuousTaskAgnostic
        );
        assert!(classify_scenario(&cfg(Undefined, true, false, true)).is_err());
        assert!(classify_scenario(&cfg(Defined, false, true, true)).is_err());
    }

    #[test]
    fn window_must_fit_in_a_task() {
        let mut c = cfg(Boundaries::Undefined, false, false, true);
        c.transition_window = 100;
        assert!(c.validate().is_err());
        c.boundaries = Boundaries::Defined;
        assert!(c.validate().is_ok());
    }

    #[test]
    fn permuted_tasks() {
        let tasks = make_permuted_tasks(5, 1, 0).unwrap();
        assert_eq!(tasks[0].permutation, vec![0, 1, 2, 3, 4]);
        let a = make_permuted_tasks(50, 3, 7).unwrap();
        assert_eq!(a, make_permuted_tasks(50, 3, 7).unwrap());
        assert_ne!(a[1].permutation, a[2].permutation);
        for t in &a {
            let mut sorted = t.permutation.clone();
            sorted.sort_unstable();
            assert_eq!(sorted, (0..50).collect::<Vec<_>>());
        }
        assert!(make_permuted_tasks(5, 0, 0).is_err());
    }

    #[test]
    fn permutations_are_far_apart() {
        // expected differing positions between two random permutations: n(1 − 1/n)
        let n = 1024;
        let tasks = make_permuted_tasks(n, 10, 3).unwrap();
        let expected = n as f64 * (1.0 - 1.0 / n as f64);
        for i in 0..10 {
            for j in i + 1..10 {
                let d = tasks[i]
                    .permutation
                    .iter()
                    .zip(&tasks[j].permutation)
                    .filter(|(a, b)| a != b)
                    .count() as f64;
                assert!((d / expected - 1.0).abs() < 0.05, "{i},{j}: {d}");
            }
        }
    }

    #[test]
    fn split_tasks() {
        let tasks = make_split_tasks(10, 2).unwrap();
        let classes: Vec<Vec<usize>> = tasks.iter().map(|t| t.classes.clone()).collect();
        assert_eq!(
            classes,
            vec![vec![0, 1], vec![2, 3], vec![4, 5], vec![6, 7], vec![8, 9]]
        );
        assert_eq!(tasks[3].head_range, vec![6, 7]);
        assert_eq!(make_split_tasks(10, 10).unwrap().len(), 1);
        assert!(make_split_tasks(10, 3).is_err());
    }

    #[test]
    fn head_assignment() {
        let mut tasks = make_split_tasks(6, 2).unwrap();
        assign_heads(&mut tasks, 2, true);
        assert_eq!(tasks[2].head_range, vec![0, 1]);
        assert_eq!(tasks[2].head_for(5), Some(1));
        assert_eq!(tasks[2].head_for(1), None);
        let mut perm = make_permuted_tasks(4, 3, 0).unwrap();
        assign_heads(&mut perm, 10, false);
        assert_eq!(perm[1].head_range, (10..20).collect::<Vec<_>>());
        assert_eq!(perm[1].head_for(3), Some(13));
    }

    #[test]
    fn discrete_schedule() {
        let s = build_schedule(&cfg(Boundaries::Defined, false, false, true));
        assert_eq!(s.weights(50), vec![1.0, 0.0]);
        assert_eq!(s.weights(150), vec![0.0, 1.0]);
    }

    #[test]
    fn continuous_schedule() {
        let s = build_schedule(&cfg(Boundaries::Undefined, false, false, true));
        assert_eq!(s.weights(100), vec![0.5, 0.5]);
        assert_eq!(s.weights(90), vec![0.75, 0.25]);
        assert_eq!(s.weights(110), vec![0.25, 0.75]);
        assert_eq!(s.weights(79), vec![1.0, 0.0]);
        assert_eq!(s.weights(121), vec![0.0, 1.0]);
    }

    proptest! {
        #[test]
        fn weights_sum_to_one(tasks in 1usize..8, duration in 1u64..200, frac in 0.0f64..1.0, it in 0u64..2000) {
            let window = ((duration as f64) * frac) as u64;
            let s = MixtureSchedule::new(tasks, duration, window.min(duration - 1));
            let w = s.weights(it);
            prop_assert_eq!(w.iter().sum::<f64>(), 1.0);
            prop_assert!(w.iter().all(|&x| (0.0..=1.0).contains(&x)));
        }

        #[test]
        fn continuous_weights_move_only_in_windows(it in 0u64..600) {
            let s = MixtureSchedule::new(3, 200, 40);
            let w = s.weights(it);
            let near = [200u64, 400].iter().any(|&b| it.abs_diff(b) < 20);
            if !near {
                prop_assert_eq!(w.iter().filter(|&&x| x == 1.0).count(), 1);
            }
        }
    }

    fn toy_data() -> Arc<Dataset> {
        let n = 40;
        let inputs = (0..n * 3).map(|i| i as f64).collect();
        let labels = (0..n).map(|i| i % 4).collect();
        Arc::new(Dataset::new(inputs, 3, labels, 4).unwrap())
    }

    fn permuted_stream(c: ScenarioConfig) -> TaskStream {
        let mut tasks = make_permuted_tasks(3, c.num_tasks, 5).unwrap();
        assign_heads(&mut tasks, c.classes_per_task, c.shared_head);
        TaskStream::new(c, Arc::new(tasks), toy_data()).unwrap()
    }

    fn four_class(mut c: ScenarioConfig) -> ScenarioConfig {
        c.classes_per_task = 4;
        c
    }

    #[test]
    fn one_hot_batches_come_from_active_task() {
        let c = four_class(cfg(Boundaries::Defined, true, false, true));
        let mut s = permuted_stream(c);
        let b = s.next_batch(10).unwrap();
        assert!(b.task_tags.unwrap().iter().all(|&t| t == 0));
        let b = s.next_batch(150).unwrap();
        assert!(b.task_tags.unwrap().iter().all(|&t| t == 1));
        assert!(matches!(s.next_batch(200), Err(Error::EndOfStream { .. })));
    }

    #[test]
    fn tags_only_when_identity_known() {
        let mut s = permuted_stream(four_class(cfg(Boundaries::Defined, false, false, true)));
        assert!(s.next_batch(0).unwrap().task_tags.is_none());
    }

    #[test]
    fn permuted_inputs_invert_exactly() {
        let c = four_class(cfg(Boundaries::Defined, true, false, true));
        let data = toy_data();
        let mut s = permuted_stream(c);
        let perm = s.tasks()[1].permutation.clone();
        let b = s.next_batch(120).unwrap();
        for i in 0..b.len() {
            let row = b.row(i);
            let mut original = vec![0.0; 3];
            for (j, &p) in perm.iter().enumerate() {
                original[p] = row[j];
            }
            // rows of the toy data are consecutive integers starting at 3·index
            let index = original[0] as usize / 3;
            assert_eq!(original.as_slice(), data.row(index));
            assert_eq!(b.labels[i], data.labels[index]);
        }
    }

    #[test]
    fn mixed_batches_are_binomial() {
        let c = ScenarioConfig {
            batch_size: 128,
            duration_per_task: 2000,
            transition_window: 1000,
            classes_per_task: 4,
            ..cfg(Boundaries::Undefined, false, false, true)
        };
        let mut s = permuted_stream(c.clone());
        // at the boundary both tasks weigh 0.5; identify the task by its permutation
        let tasks = s.tasks().to_vec();
        let data = toy_data();
        let mut total_first = 0usize;
        let batches = 1000;
        for _ in 0..batches {
            let b = s.next_batch(2000).unwrap();
            for i in 0..b.len() {
                let row = b.row(i);
                let from_first = (0..data.len()).any(|k| tasks[0].transform(data.row(k)) == row);
                total_first += from_first as usize;
            }
        }
        let avg = total_first as f64 / batches as f64;
        assert!((avg - 64.0).abs() < 3.0 * (128.0f64 * 0.25).sqrt(), "{avg}");
    }

    #[test]
    fn streams_are_reproducible() {
        let c = four_class(cfg(Boundaries::Undefined, false, false, true));
        let mut a = permuted_stream(c.clone());
        let mut b = permuted_stream(c);
        for it in 0..200 {
            assert_eq!(a.next_batch(it).unwrap(), b.next_batch(it).unwrap());
        }
    }

    #[test]
    fn zero_window_continuous_equals_discrete() {
        let mut cont = four_class(cfg(Boundaries::Undefined, false, false, true));
        cont.transition_window = 0;
        let mut disc = cont.clone();
        disc.boundaries = Boundaries::Defined;
        let mut a = permuted_stream(cont);
        let mut b = permuted_stream(disc);
        for it in 0..200 {
            assert_eq!(a.next_batch(it).unwrap(), b.next_batch(it).unwrap());
        }
    }

    fn split_cfg(trick: bool) -> (ScenarioConfig, Vec<TaskSpec>) {
        let c = ScenarioConfig {
            num_tasks: 5,
            labels_trick: trick,
            ..cfg(Boundaries::Defined, true, false, false)
        };
        let mut tasks = make_split_tasks(10, 2).unwrap();
        assign_heads(&mut tasks, 2, false);
        (c, tasks)
    }

    #[test]
    fn labels_trick_masks() {
        let (on, tasks) = split_cfg(true);
        let mask = head_mask_for_batch(&[3, 4, 4, 3], &on, &tasks, None).unwrap();
        assert_eq!(mask.allowed(), &[3, 4]);
        let (off, _) = split_cfg(false);
        let mask = head_mask_for_batch(&[3, 4], &off, &tasks, None).unwrap();
        assert_eq!(mask.allowed(), &(0..10).collect::<Vec<_>>()[..]);
        assert!(matches!(
            head_mask_for_batch(&[], &on, &tasks, None),
            Err(Error::EmptyBatch)
        ));
    }

    #[test]
    fn task_learning_uses_current_task_heads() {
        let (mut c, tasks) = split_cfg(false);
        c.task_id_in_test = true;
        let mask = head_mask_for_batch(&[4, 5], &c, &tasks, Some(2)).unwrap();
        assert_eq!(mask.allowed(), &[4, 5]);
        assert_eq!(eval_mask(&c, &tasks[2]).unwrap().allowed(), &[4, 5]);
        c.shared_head = true;
        assert_eq!(
            head_mask_for_batch(&[1], &c, &tasks, Some(2))
                .unwrap()
                .len(),
            2
        );
    }

    #[test]
    fn labels_trick_mask_is_union_of_present_task_heads() {
        // pure batches: mask equals the union of the head ranges of the tasks present
        let (c, tasks) = split_cfg(true);
        let data = {
            let inputs = (0..100).map(|i| i as f64).collect();
            let labels = (0..100).map(|i| i % 10).collect();
            Arc::new(Dataset::new(inputs, 1, labels, 10).unwrap())
        };
        let mut s = TaskStream::new(
            ScenarioConfig {
                batch_size: 64,
                ..c.clone()
            },
            Arc::new(tasks.clone()),
            data,
        )
        .unwrap();
        for it in [0, 150, 420] {
            let b = s.next_batch(it).unwrap();
            let mask = head_mask_for_batch(&b.labels, &c, &tasks, None).unwrap();
            let mut union: Vec<usize> = b
                .task_tags
                .unwrap()
                .iter()
                .flat_map(|&t| tasks[t].head_range.clone())
                .collect();
            union.sort_unstable();
            union.dedup();
            assert_eq!(mask.allowed(), &union[..]);
        }
    }
}
