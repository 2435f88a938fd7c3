//! Bayesian Gradient Descent.
//!
//! The posterior over weights is a diagonal Gaussian `N(mu, sigma²)`. Each step
//! uses the current posterior as the prior, estimates
//! `E[∂L/∂θ]` and `E[∂L/∂θ · ε]` with `K` reparameterized samples
//! `θ = mu + ε ⊙ sigma`, and applies the closed-form update
//!
//! ```text
//! mu'    = mu − η σ² E[∂L/∂θ]
//! sigma' = σ √(1 + x²) − σ x,   x = ½ σ E[∂L/∂θ · ε]
//! ```
//!
//! Gradients are always evaluated at the prior parameters (one explicit
//! iteration of the implicit fixed-point equations).

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine::{self, Batch, FlatWeights, HeadMask, NetworkSpec};
use crate::error::{Error, Result};
use crate::rng::{self, Domain};

/// Smallest sigma accepted after an update; anything below means underflow.
pub const SIGMA_UNDERFLOW: f64 = 1e-300;

const SAMPLE_CHUNK: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InferenceMode {
    #[default]
    McAverage,
    Map,
}

/// Monte Carlo estimator of the two expectations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    /// Sample means of `∇L(θ_k)` and `∇L(θ_k) ε_k`.
    #[default]
    Plain,
    /// `∇L(μ)` as a control variate for the `ε`-weighted mean.
    Centered,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    #[serde(default = "default_eta")]
    pub eta: f64,
    #[serde(default = "default_samples")]
    pub mc_samples: usize,
    pub sigma_init: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub inference_mode: InferenceMode,
    #[serde(default = "default_samples")]
    pub inference_samples: usize,
    /// Threads used for the Monte Carlo gradient evaluations of one step.
    #[serde(default = "default_workers")]
    pub workers: usize,
    /// Multiplies the batch-mean loss the optimizer sees (a likelihood weight).
    #[serde(default = "default_loss_scale")]
    pub loss_scale: f64,
    #[serde(default)]
    pub estimator: Estimator,
}

fn default_eta() -> f64 {
    1.0
}

fn default_samples() -> usize {
    10
}

fn default_workers() -> usize {
    1
}

fn default_loss_scale() -> f64 {
    1.0
}

impl OptimizerConfig {
    pub fn new(sigma_init: f64, seed: u64) -> Self {
        OptimizerConfig {
            eta: default_eta(),
            mc_samples: default_samples(),
            sigma_init,
            seed,
            inference_mode: InferenceMode::McAverage,
            inference_samples: default_samples(),
            workers: default_workers(),
            loss_scale: default_loss_scale(),
            estimator: Estimator::Plain,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(Error::Config(format!(
                "eta must be positive, got {}",
                self.eta
            )));
        }
        if self.mc_samples == 0 || self.inference_samples == 0 {
            return Err(Error::Config(
                "Monte Carlo sample counts must be at least 1".into(),
            ));
        }
        if !(self.sigma_init > 0.0 && self.sigma_init.is_finite()) {
            return Err(Error::Config(format!(
                "sigma_init must be positive, got {}",
                self.sigma_init
            )));
        }
        if self.workers == 0 {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        if !(self.loss_scale > 0.0 && self.loss_scale.is_finite()) {
            return Err(Error::Config(format!(
                "loss_scale must be positive, got {}",
                self.loss_scale
            )));
        }
        Ok(())
    }
}

/// Diagonal Gaussian posterior; the previous step's value is the prior of the next.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariationalParams {
    pub mu: FlatWeights,
    pub sigma: FlatWeights,
}

impl VariationalParams {
    pub fn new(mu: Vec<f64>, sigma: Vec<f64>) -> Result<Self> {
        if mu.len() != sigma.len() {
            return Err(Error::Shape(format!(
                "{} means but {} standard deviations",
                mu.len(),
                sigma.len()
            )));
        }
        if let Some(i) = sigma.iter().position(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::Config(format!(
                "sigma[{i}] = {} is not a positive finite number",
                sigma[i]
            )));
        }
        Ok(VariationalParams {
            mu: mu.into(),
            sigma: sigma.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.mu.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mu.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct McSample {
    pub epsilon: Vec<f64>,
    pub theta: FlatWeights,
    pub grad: Option<FlatWeights>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpectationEstimates {
    /// Estimate of `E[∂L/∂θ_i]`.
    pub g_mean: Vec<f64>,
    /// Estimate of `E[∂L/∂θ_i · ε_i]`.
    pub g_eps_mean: Vec<f64>,
}

/// Estimates plus per-coordinate standard errors of the two sample means.
#[derive(Debug, Clone, PartialEq)]
pub struct McStatistics {
    pub estimates: ExpectationEstimates,
    pub g_stderr: Vec<f64>,
    pub g_eps_stderr: Vec<f64>,
}

/// Anything that can return `∂L/∂θ` at a weight vector.
pub trait GradientOracle: Sync {
    fn dim(&self) -> usize;
    fn gradient(&self, theta: &[f64]) -> Result<FlatWeights>;
}

/// The masked cross-entropy of an MLP on one batch.
pub struct NetworkObjective<'a> {
    pub spec: &'a NetworkSpec,
    pub batch: &'a Batch,
    pub mask: &'a HeadMask,
}

impl GradientOracle for NetworkObjective<'_> {
    fn dim(&self) -> usize {
        self.spec.num_params()
    }

    fn gradient(&self, theta: &[f64]) -> Result<FlatWeights> {
        engine::loss_and_gradient(self.spec, theta, self.batch, self.mask).map(|(_, g)| g)
    }
}

/// Thread pool for Monte Carlo samples; `None` runs them inline.
#[derive(Clone, Default)]
pub struct Workers(Option<Arc<rayon::ThreadPool>>);

impl Workers {
    pub fn sequential() -> Self {
        Workers(None)
    }

    pub fn new(threads: usize) -> Result<Self> {
        if threads <= 1 {
            return Ok(Workers(None));
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| Error::Config(format!("cannot start {threads} workers: {e}")))?;
        Ok(Workers(Some(Arc::new(pool))))
    }

    fn map<T: Send>(&self, range: std::ops::Range<usize>, f: impl Fn(usize) -> T + Sync) -> Vec<T> {
        match &self.0 {
            Some(pool) => pool.install(|| range.into_par_iter().map(&f).collect()),
            None => range.map(f).collect(),
        }
    }
}

impl std::fmt::Debug for Workers {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match &self.0 {
            Some(pool) => write!(f, "Workers({})", pool.current_num_threads()),
            None => write!(f, "Workers(sequential)"),
        }
    }
}

pub fn init_params(spec: &NetworkSpec, cfg: &OptimizerConfig) -> Result<VariationalParams> {
    spec.validate()?;
    cfg.validate()?;
    let layout = spec.layout();
    let mut mu = vec![0.0; layout.len()];
    for (l, shape) in layout.layers().iter().enumerate() {
        let std = (2.0 / (shape.fan_in + shape.fan_out) as f64).sqrt();
        let range = shape.weights();
        let noise = rng::standard_normals(cfg.seed, Domain::Init, l as u64, 0, range.len());
        for (m, z) in mu[range].iter_mut().zip(noise) {
            *m = z * std;
        }
    }
    let sigma = vec![cfg.sigma_init; layout.len()];
    Ok(VariationalParams {
        mu: mu.into(),
        sigma: sigma.into(),
    })
}

/// Draw `θ = mu + ε ⊙ sigma` from the counter stream `(seed, step, k)`.
pub fn sample_weights(params: &VariationalParams, seed: u64, step: u64, k: u64) -> McSample {
    let epsilon = rng::standard_normals(seed, Domain::TrainNoise, step, k, params.len());
    let theta = reparameterize(params, &epsilon);
    McSample {
        epsilon,
        theta,
        grad: None,
    }
}

pub fn reparameterize(params: &VariationalParams, epsilon: &[f64]) -> FlatWeights {
    params
        .mu
        .iter()
        .zip(params.sigma.iter())
        .zip(epsilon)
        .map(|((m, s), e)| m + e * s)
        .collect::<Vec<_>>()
        .into()
}

/// Monte Carlo estimates of both expectations from `k_samples` draws keyed by `(seed, step, k)`.
///
/// Samples may be evaluated on any number of workers; accumulation always runs
/// in ascending `k`, so the result does not depend on the worker count.
pub fn estimate_expectations(
    oracle: &dyn GradientOracle,
    params: &VariationalParams,
    seed: u64,
    step: u64,
    k_samples: usize,
    workers: &Workers,
) -> Result<ExpectationEstimates> {
    accumulate(oracle, params, seed, step, k_samples, workers, false).map(|s| s.estimates)
}

/// `∇L(θ) − ∇L(μ)`. The subtracted term does not depend on ε, so
/// `E[(·) ε] = E[∇L ε]` while the first-order noise of the plain estimator
/// cancels.
pub struct CenteredOracle<'a> {
    inner: &'a dyn GradientOracle,
    baseline: FlatWeights,
}

impl<'a> CenteredOracle<'a> {
    pub fn at(inner: &'a dyn GradientOracle, mu: &[f64]) -> Result<Self> {
        Ok(CenteredOracle {
            inner,
            baseline: inner.gradient(mu)?,
        })
    }

    pub fn baseline(&self) -> &[f64] {
        &self.baseline
    }
}

impl GradientOracle for CenteredOracle<'_> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn gradient(&self, theta: &[f64]) -> Result<FlatWeights> {
        let mut g = self.inner.gradient(theta)?;
        for (g, b) in g.iter_mut().zip(self.baseline.iter()) {
            *g -= b;
        }
        Ok(g)
    }
}

/// Expectations estimated through [`CenteredOracle`]: the same `g_mean` as the
/// plain estimator, a lower-variance `g_eps_mean`. Costs one extra gradient.
pub fn estimate_expectations_centered(
    oracle: &dyn GradientOracle,
    params: &VariationalParams,
    seed: u64,
    step: u64,
    k_samples: usize,
    workers: &Workers,
) -> Result<ExpectationEstimates> {
    let centered = CenteredOracle::at(oracle, &params.mu)?;
    let mut est = estimate_expectations(&centered, params, seed, step, k_samples, workers)?;
    for (g, b) in est.g_mean.iter_mut().zip(centered.baseline()) {
        *g += b;
    }
    Ok(est)
}

/// Like [`estimate_expectations`], also returning standard errors of both means.
pub fn estimate_statistics(
    oracle: &dyn GradientOracle,
    params: &VariationalParams,
    seed: u64,
    step: u64,
    k_samples: usize,
    workers: &Workers,
) -> Result<McStatistics> {
    accumulate(oracle, params, seed, step, k_samples, workers, true)
}

/// Network form: estimates for the masked batch loss of `spec`.
pub fn estimate_network_expectations(
    spec: &NetworkSpec,
    params: &VariationalParams,
    batch: &Batch,
    mask: &HeadMask,
    seed: u64,
    step: u64,
    k_samples: usize,
    workers: &Workers,
) -> Result<ExpectationEstimates> {
    let oracle = NetworkObjective { spec, batch, mask };
    estimate_expectations(&oracle, params, seed, step, k_samples, workers)
}

fn accumulate(
    oracle: &dyn GradientOracle,
    params: &VariationalParams,
    seed: u64,
    step: u64,
    k_samples: usize,
    workers: &Workers,
    second_moments: bool,
) -> Result<McStatistics> {
    if k_samples == 0 {
        return Err(Error::Config(
            "at least one Monte Carlo sample is required".into(),
        ));
    }
    let n = params.len();
    if oracle.dim() != n {
        return Err(Error::Shape(format!(
            "objective has {} parameters, posterior has {n}",
            oracle.dim()
        )));
    }
    let mut g_sum = vec![0.0; n];
    let mut ge_sum = vec![0.0; n];
    let (mut g_sq, mut ge_sq) = if second_moments {
        (vec![0.0; n], vec![0.0; n])
    } else {
        (Vec::new(), Vec::new())
    };

    for chunk_start in (0..k_samples).step_by(SAMPLE_CHUNK) {
        let chunk_end = (chunk_start + SAMPLE_CHUNK).min(k_samples);
        let samples = workers.map(chunk_start..chunk_end, |k| {
            let sample = sample_weights(params, seed, step, k as u64);
            oracle.gradient(&sample.theta).map(|g| (sample.epsilon, g))
        });
        for sample in samples {
            let (eps, grad) = sample?;
            if grad.len() != n {
                return Err(Error::Shape(format!(
                    "gradient of length {} for {n} parameters",
                    grad.len()
                )));
            }
            if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
                return Err(Error::NonFinite {
                    what: "Monte Carlo gradient",
                    coordinate: i,
                });
            }
            for i in 0..n {
                let g = grad[i];
                let ge = g * eps[i];
                g_sum[i] += g;
                ge_sum[i] += ge;
                if second_moments {
                    g_sq[i] += g * g;
                    ge_sq[i] += ge * ge;
                }
            }
        }
    }

    let k = k_samples as f64;
    let g_mean: Vec<f64> = g_sum.iter().map(|s| s / k).collect();
    let g_eps_mean: Vec<f64> = ge_sum.iter().map(|s| s / k).collect();
    let stderr = |sq: &[f64], mean: &[f64]| -> Vec<f64> {
        if !second_moments || k_samples < 2 {
            return vec![f64::NAN; if second_moments { n } else { 0 }];
        }
        sq.iter()
            .zip(mean)
            .map(|(s, m)| {
                let var = ((s / k - m * m) * k / (k - 1.0)).max(0.0);
                (var / k).sqrt()
            })
            .collect()
    };
    let g_stderr = stderr(&g_sq, &g_mean);
    let g_eps_stderr = stderr(&ge_sq, &g_eps_mean);
    Ok(McStatistics {
        estimates: ExpectationEstimates { g_mean, g_eps_mean },
        g_stderr,
        g_eps_stderr,
    })
}

/// `√(1 + x²) − x`, evaluated without cancellation or overflow of `x²`.
pub fn sigma_factor(x: f64) -> f64 {
    let root = 1f64.hypot(x);
    if x >= 0.0 {
        1.0 / (root + x)
    } else {
        root - x
    }
}

/// One closed-form update. The input posterior is left untouched.
pub fn bgd_step(
    params: &VariationalParams,
    est: &ExpectationEstimates,
    eta: f64,
) -> Result<VariationalParams> {
    let n = params.len();
    if est.g_mean.len() != n || est.g_eps_mean.len() != n {
        return Err(Error::Shape(format!(
            "estimates of length {}/{} for {n} parameters",
            est.g_mean.len(),
            est.g_eps_mean.len()
        )));
    }
    let mut mu = Vec::with_capacity(n);
    let mut sigma = Vec::with_capacity(n);
    for i in 0..n {
        let (m, s) = (params.mu[i], params.sigma[i]);
        let (g, ge) = (est.g_mean[i], est.g_eps_mean[i]);
        if !g.is_finite() || !ge.is_finite() {
            return Err(Error::NonFinite {
                what: "expectation estimate",
                coordinate: i,
            });
        }
        let new_mu = m - eta * s * s * g;
        let x = 0.5 * s * ge;
        let new_sigma = s * sigma_factor(x);
        if !new_mu.is_finite() || !new_sigma.is_finite() {
            return Err(Error::NonFinite {
                what: "updated posterior",
                coordinate: i,
            });
        }
        if new_sigma < SIGMA_UNDERFLOW {
            return Err(Error::Underflow {
                coordinate: i,
                value: new_sigma,
            });
        }
        mu.push(new_mu);
        sigma.push(new_sigma);
    }
    Ok(VariationalParams {
        mu: mu.into(),
        sigma: sigma.into(),
    })
}

/// Class probabilities `[rows × num_heads]`; every row sums to one.
pub fn predict(
    spec: &NetworkSpec,
    params: &VariationalParams,
    inputs: &[f64],
    rows: usize,
    mode: InferenceMode,
    k_samples: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let heads = spec.num_heads;
    match mode {
        InferenceMode::Map => {
            let z = engine::logits(spec, &params.mu, inputs, rows)?;
            Ok(engine::softmax_rows(&z, heads))
        }
        InferenceMode::McAverage => {
            if k_samples == 0 {
                return Err(Error::Config(
                    "at least one inference sample is required".into(),
                ));
            }
            let mut acc = vec![0.0; rows * heads];
            for k in 0..k_samples {
                let eps =
                    rng::standard_normals(seed, Domain::PredictNoise, 0, k as u64, params.len());
                let theta = reparameterize(params, &eps);
                let z = engine::logits(spec, &theta, inputs, rows)?;
                for (a, p) in acc.iter_mut().zip(engine::softmax_rows(&z, heads)) {
                    *a += p;
                }
            }
            let k = k_samples as f64;
            acc.iter_mut().for_each(|a| *a /= k);
            Ok(acc)
        }
    }
}

/// Stateful driver: owns the posterior and the step counter.
#[derive(Debug)]
pub struct BgdOptimizer {
    pub config: OptimizerConfig,
    pub params: VariationalParams,
    step: u64,
    workers: Workers,
}

impl BgdOptimizer {
    pub fn new(spec: &NetworkSpec, config: OptimizerConfig) -> Result<Self> {
        let params = init_params(spec, &config)?;
        let workers = Workers::new(config.workers)?;
        Ok(BgdOptimizer {
            config,
            params,
            step: 0,
            workers,
        })
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, oracle: &dyn GradientOracle) -> Result<()> {
        let estimate = match self.config.estimator {
            Estimator::Plain => estimate_expectations,
            Estimator::Centered => estimate_expectations_centered,
        };
        let mut est = estimate(
            oracle,
            &self.params,
            self.config.seed,
            self.step,
            self.config.mc_samples,
            &self.workers,
        )?;
        let scale = self.config.loss_scale;
        if scale != 1.0 {
            est.g_mean
                .iter_mut()
                .chain(est.g_eps_mean.iter_mut())
                .for_each(|g| *g *= scale);
        }
        self.params = bgd_step(&self.params, &est, self.config.eta)?;
        self.step += 1;
        Ok(())
    }

    pub fn predict(&self, spec: &NetworkSpec, inputs: &[f64], rows: usize) -> Result<Vec<f64>> {
        predict(
            spec,
            &self.params,
            inputs,
            rows,
            self.config.inference_mode,
            self.config.inference_samples,
            self.config.seed,
        )
    }
}
