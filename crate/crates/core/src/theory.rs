//! Analytic checks of the BGD update.
//!
//! Diagonal quadratics `L(θ) = ½ Σ a_i (θ_i − b_i)²` have closed-form Gaussian
//! expectations `E[∂L/∂θ_i] = a_i (μ_i − b_i)` and `E[∂L/∂θ_i · ε_i] = a_i σ_i`,
//! which lets the sigma monotonicity results be checked without Monte Carlo
//! noise. Sampled paths are checked with a three-standard-error slack.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bgd::{
    self, CenteredOracle, ExpectationEstimates, GradientOracle, NetworkObjective,
    VariationalParams, Workers,
};
use crate::engine::{self, Batch, FlatWeights, HeadMask, NetworkSpec};
use crate::error::{Error, Result};
use crate::rng::{self, Domain};
use crate::stats;

/// Relative curvature errors are only reported where `|H_ii|` exceeds this.
pub const HESSIAN_FLOOR: f64 = 1e-3;
/// Step of the central-difference Hessian diagonal.
pub const HESSIAN_STEP: f64 = 1e-5;
pub const MC_SLACK_STDERRS: f64 = 3.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadraticProblem {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

impl QuadraticProblem {
    pub fn new(a: Vec<f64>, b: Vec<f64>) -> Result<Self> {
        if a.len() != b.len() || a.is_empty() {
            return Err(Error::Shape(format!(
                "curvature of length {} and minimizer of length {}",
                a.len(),
                b.len()
            )));
        }
        Ok(QuadraticProblem { a, b })
    }

    pub fn dim(&self) -> usize {
        self.a.len()
    }

    /// Strong-convexity parameter `min_i a_i`.
    pub fn strong_convexity(&self) -> f64 {
        self.a.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn value(&self, theta: &[f64]) -> f64 {
        0.5 * theta
            .iter()
            .zip(&self.a)
            .zip(&self.b)
            .map(|((t, a), b)| a * (t - b) * (t - b))
            .sum::<f64>()
    }

    /// A member of the random test family: `a ∈ [0.1, 10]` (negated when
    /// `concave`), `b, μ₀ ∈ [−5, 5]`, `σ₀ ∈ [0.01, 1]`.
    pub fn random(
        rng: &mut impl Rng,
        dim: usize,
        concave: bool,
    ) -> (QuadraticProblem, VariationalParams) {
        let sign = if concave { -1.0 } else { 1.0 };
        let a = (0..dim)
            .map(|_| sign * rng.random_range(0.1..=10.0))
            .collect();
        let b = (0..dim).map(|_| rng.random_range(-5.0..=5.0)).collect();
        let mu: Vec<f64> = (0..dim).map(|_| rng.random_range(-5.0..=5.0)).collect();
        let sigma: Vec<f64> = (0..dim).map(|_| rng.random_range(0.01..=1.0)).collect();
        (
            QuadraticProblem { a, b },
            VariationalParams {
                mu: mu.into(),
                sigma: sigma.into(),
            },
        )
    }
}

impl GradientOracle for QuadraticProblem {
    fn dim(&self) -> usize {
        self.a.len()
    }

    fn gradient(&self, theta: &[f64]) -> Result<FlatWeights> {
        Ok(theta
            .iter()
            .zip(&self.a)
            .zip(&self.b)
            .map(|((t, a), b)| a * (t - b))
            .collect::<Vec<_>>()
            .into())
    }
}

/// Exact `(E[∂L/∂θ], E[∂L/∂θ · ε])` under `N(mu, sigma²)`.
pub fn quadratic_expectations(
    p: &QuadraticProblem,
    mu: &[f64],
    sigma: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let grad = mu
        .iter()
        .zip(&p.a)
        .zip(&p.b)
        .map(|((m, a), b)| a * (m - b))
        .collect();
    let grad_eps = sigma.iter().zip(&p.a).map(|(s, a)| a * s).collect();
    (grad, grad_eps)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Claim {
    Theorem1,
    Corollary1,
    Curvature,
    FreeEnergy,
    RuntimeScaling,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoryReport {
    pub claim: Claim,
    pub passed: bool,
    /// Problems (or trajectories, or coordinates) examined.
    pub checked: usize,
    pub violations: usize,
    /// Exact-path slack of each checked inequality (≥ 0 when it holds).
    pub inequality_margins: Vec<f64>,
    /// Sampled-path slack: estimate − bound + 3·stderr.
    pub mc_margins: Vec<f64>,
    pub sigma_trajectory: Vec<Vec<f64>>,
    /// `ln σ` for steps past the finite `f64` range.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub log_sigma_continuation: Vec<Vec<f64>>,
    pub curvature_errors: Vec<f64>,
    pub summary: BTreeMap<String, f64>,
    pub notes: Vec<String>,
}

impl TheoryReport {
    pub fn new(claim: Claim) -> Self {
        TheoryReport {
            claim,
            passed: true,
            checked: 0,
            violations: 0,
            inequality_margins: Vec::new(),
            mc_margins: Vec::new(),
            sigma_trajectory: Vec::new(),
            log_sigma_continuation: Vec::new(),
            curvature_errors: Vec::new(),
            summary: BTreeMap::new(),
            notes: Vec::new(),
        }
    }

    pub fn fail_with(&mut self, note: String) {
        self.fail(note)
    }

    fn fail(&mut self, note: String) {
        self.passed = false;
        self.violations += 1;
        self.notes.push(note);
    }

    /// Fold another entry of the same claim into a battery report.
    pub fn absorb(&mut self, other: TheoryReport) {
        self.passed &= other.passed;
        self.checked += other.checked;
        self.violations += other.violations;
        self.inequality_margins.extend(other.inequality_margins);
        self.mc_margins.extend(other.mc_margins);
        self.notes.extend(other.notes);
    }
}

/// `E[∂L/∂θ_i · ε_i] ≥ m σ_i > 0` on a strongly convex quadratic, exactly and
/// (for `k_samples > 0`) by Monte Carlo with a 3-stderr slack.
pub fn check_theorem1(
    p: &QuadraticProblem,
    params: &VariationalParams,
    k_samples: usize,
    seed: u64,
) -> Result<TheoryReport> {
    let m = p.strong_convexity();
    if !(m > 0.0) {
        return Err(Error::Config(format!(
            "theorem check needs a strongly convex problem, min curvature is {m}"
        )));
    }
    let mut report = TheoryReport::new(Claim::Theorem1);
    report.checked = 1;
    let (_, exact) = quadratic_expectations(p, &params.mu, &params.sigma);
    for (i, (&e, &s)) in exact.iter().zip(params.sigma.iter()).enumerate() {
        let margin = e - m * s;
        report.inequality_margins.push(margin);
        if margin < 0.0 || !(e > 0.0) {
            report.fail(format!(
                "exact: coordinate {i}: E[L'ε] = {e} < m·σ = {}",
                m * s
            ));
        }
    }
    if k_samples > 0 {
        let stats =
            bgd::estimate_statistics(p, params, seed, 0, k_samples, &Workers::sequential())?;
        for (i, ((&est, &se), &s)) in stats
            .estimates
            .g_eps_mean
            .iter()
            .zip(&stats.g_eps_stderr)
            .zip(params.sigma.iter())
            .enumerate()
        {
            let margin = est - m * s + MC_SLACK_STDERRS * se;
            report.mc_margins.push(margin);
            if margin < 0.0 {
                report.fail(format!(
                    "sampled: coordinate {i}: estimate {est} below m·σ − 3·stderr = {}",
                    m * s - MC_SLACK_STDERRS * se
                ));
            }
        }
    }
    Ok(report)
}

/// Run `steps` exact-expectation BGD updates and require every sigma to move
/// strictly in the direction set by the sign of its curvature (constant for
/// zero curvature).
///
/// On concave problems sigma grows doubly exponentially and leaves the `f64`
/// range within a few steps. From that step on the sigma recursion, which
/// does not involve `μ` for quadratics, is continued on `ln σ` and checked
/// there; `summary["overflow_step"]` records the switch and
/// `log_sigma_continuation` the continued trajectory.
pub fn check_corollary1(
    p: &QuadraticProblem,
    init: &VariationalParams,
    steps: usize,
    eta: f64,
) -> Result<TheoryReport> {
    if steps < 2 {
        return Err(Error::Config(format!("need at least 2 steps, got {steps}")));
    }
    let mut report = TheoryReport::new(Claim::Corollary1);
    report.checked = 1;
    let mut params = init.clone();
    report.sigma_trajectory.push(params.sigma.to_vec());
    let mut step = 1;
    while step <= steps {
        let (g_mean, g_eps_mean) = quadratic_expectations(p, &params.mu, &params.sigma);
        let next = match bgd::bgd_step(&params, &ExpectationEstimates { g_mean, g_eps_mean }, eta) {
            Ok(next) => next,
            Err(Error::NonFinite { .. }) => break,
            Err(e) => return Err(e),
        };
        check_direction(&mut report, step, &params.sigma, &next.sigma, &p.a);
        report.sigma_trajectory.push(next.sigma.to_vec());
        params = next;
        step += 1;
    }
    if step <= steps {
        report.summary.insert("overflow_step".into(), step as f64);
        let mut log_sigma: Vec<f64> = params.sigma.iter().map(|s| s.ln()).collect();
        while step <= steps {
            let next: Vec<f64> = log_sigma
                .iter()
                .zip(&p.a)
                .map(|(&ls, &a)| ls + ln_sigma_factor(a, ls))
                .collect();
            check_direction(&mut report, step, &log_sigma, &next, &p.a);
            report.log_sigma_continuation.push(next.clone());
            log_sigma = next;
            step += 1;
        }
    }
    Ok(report)
}

fn check_direction(
    report: &mut TheoryReport,
    step: usize,
    before: &[f64],
    after: &[f64],
    a: &[f64],
) {
    for (i, ((&b, &n), &a)) in before.iter().zip(after).zip(a).enumerate() {
        let ok = if a > 0.0 {
            n < b
        } else if a < 0.0 {
            n > b
        } else {
            n == b
        };
        if !ok {
            report.fail(format!(
                "step {step}, coordinate {i}: {b} -> {n} with curvature {a}"
            ));
        }
    }
}

/// `ln(√(1+x²) − x)` for `x = ½ a σ²` given `ln σ`, valid when `x` itself
/// overflows.
pub fn ln_sigma_factor(a: f64, ln_sigma: f64) -> f64 {
    if a == 0.0 {
        return 0.0;
    }
    let ln_abs_x = (0.5 * a.abs()).ln() + 2.0 * ln_sigma;
    if ln_abs_x < 300.0 {
        let x = 0.5 * a * (2.0 * ln_sigma).exp();
        return bgd::sigma_factor(x).ln();
    }
    // √(1+x²) − x → 1/(2x) for large positive x, 2|x| for large negative x
    let ln_two_abs_x = std::f64::consts::LN_2 + ln_abs_x;
    if a > 0.0 {
        -ln_two_abs_x
    } else {
        ln_two_abs_x
    }
}

/// Central differences of the analytic gradient along each axis.
pub fn hessian_diagonal(oracle: &dyn GradientOracle, at: &[f64], h: f64) -> Result<Vec<f64>> {
    let mut probe = at.to_vec();
    (0..at.len())
        .map(|i| {
            probe[i] = at[i] + h;
            let up = oracle.gradient(&probe)?[i];
            probe[i] = at[i] - h;
            let down = oracle.gradient(&probe)?[i];
            probe[i] = at[i];
            Ok((up - down) / (2.0 * h))
        })
        .collect()
}

/// Compare `E[∂L/∂θ_i · ε_i] / σ_i` with the finite-difference Hessian
/// diagonal at `μ`, on coordinates where `|H_ii| > HESSIAN_FLOOR`.
///
/// Passes when the median relative error is below `tolerance`.
pub fn check_curvature_approx(
    oracle: &dyn GradientOracle,
    params: &VariationalParams,
    k_samples: usize,
    seed: u64,
    tolerance: f64,
    workers: &Workers,
) -> Result<TheoryReport> {
    let hessian = hessian_diagonal(oracle, &params.mu, HESSIAN_STEP)?;
    let centered = CenteredOracle::at(oracle, &params.mu)?;
    let est = bgd::estimate_expectations(&centered, params, seed, 0, k_samples, workers)?;
    let mut report = TheoryReport::new(Claim::Curvature);
    for i in 0..hessian.len() {
        if hessian[i].abs() > HESSIAN_FLOOR {
            let approx = est.g_eps_mean[i] / params.sigma[i];
            report
                .curvature_errors
                .push((approx - hessian[i]).abs() / hessian[i].abs());
        }
    }
    report.checked = report.curvature_errors.len();
    let median = stats::median(&report.curvature_errors);
    report
        .summary
        .insert("median_relative_error".into(), median);
    report
        .summary
        .insert("coordinates_above_floor".into(), report.checked as f64);
    report.summary.insert("tolerance".into(), tolerance);
    if report.checked == 0 || !(median < tolerance) {
        report.fail(format!(
            "median relative error {median} not below {tolerance}"
        ));
    }
    Ok(report)
}

/// Value of a loss at a weight vector.
pub trait LossFunction: Sync {
    fn value(&self, theta: &[f64]) -> Result<f64>;
}

impl LossFunction for NetworkObjective<'_> {
    fn value(&self, theta: &[f64]) -> Result<f64> {
        engine::loss(self.spec, theta, self.batch, self.mask)
    }
}

impl LossFunction for QuadraticProblem {
    fn value(&self, theta: &[f64]) -> Result<f64> {
        Ok(QuadraticProblem::value(self, theta))
    }
}

pub fn log_density(params: &VariationalParams, theta: &[f64]) -> f64 {
    let n = theta.len() as f64;
    let mut acc = -0.5 * n * (2.0 * std::f64::consts::PI).ln();
    for ((t, m), s) in theta.iter().zip(params.mu.iter()).zip(params.sigma.iter()) {
        let z = (t - m) / s;
        acc -= s.ln() + 0.5 * z * z;
    }
    acc
}

/// Closed-form `KL(q ‖ prior)` between diagonal Gaussians.
pub fn diagonal_kl(q: &VariationalParams, prior: &VariationalParams) -> f64 {
    q.mu.iter()
        .zip(q.sigma.iter())
        .zip(prior.mu.iter().zip(prior.sigma.iter()))
        .map(|((m1, s1), (m0, s0))| {
            (s0 / s1).ln() + (s1 * s1 + (m1 - m0).powi(2)) / (2.0 * s0 * s0) - 0.5
        })
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FreeEnergy {
    pub estimate: f64,
    pub stderr: f64,
}

/// Monte Carlo estimate of `E_q[log q − log prior + L]`. Diagnostic only.
pub fn free_energy_estimate(
    params: &VariationalParams,
    prior: &VariationalParams,
    loss: &dyn LossFunction,
    k_samples: usize,
    seed: u64,
) -> Result<FreeEnergy> {
    if k_samples == 0 {
        return Err(Error::Config("at least one sample is required".into()));
    }
    if params.len() != prior.len() {
        return Err(Error::Shape("posterior and prior differ in length".into()));
    }
    let mut values = Vec::with_capacity(k_samples);
    for k in 0..k_samples {
        let eps = rng::standard_normals(seed, Domain::Theory, 0, k as u64, params.len());
        let theta = bgd::reparameterize(params, &eps);
        values.push(log_density(params, &theta) - log_density(prior, &theta) + loss.value(&theta)?);
    }
    Ok(FreeEnergy {
        estimate: stats::mean(&values),
        stderr: stats::std_dev(&values) / (k_samples as f64).sqrt(),
    })
}

/// Theorem 1 over `problems` random strongly convex quadratics.
pub fn theorem1_battery(
    problems: usize,
    dim: usize,
    k_samples: usize,
    seed: u64,
) -> Result<TheoryReport> {
    let mut rng = rng::stream(seed, Domain::Theory, 1, 0);
    let mut report = TheoryReport::new(Claim::Theorem1);
    for i in 0..problems {
        let (p, params) = QuadraticProblem::random(&mut rng, dim, false);
        report.absorb(check_theorem1(
            &p,
            &params,
            k_samples,
            seed.wrapping_add(i as u64 + 1),
        )?);
    }
    report.summary.insert("problems".into(), problems as f64);
    report.summary.insert(
        "min_exact_margin".into(),
        report
            .inequality_margins
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min),
    );
    if !report.mc_margins.is_empty() {
        report.summary.insert(
            "min_mc_margin".into(),
            report
                .mc_margins
                .iter()
                .copied()
                .fold(f64::INFINITY, f64::min),
        );
    }
    Ok(report)
}

/// Corollary 1 over `problems` random quadratics of one curvature sign.
pub fn corollary1_battery(
    problems: usize,
    dim: usize,
    steps: usize,
    concave: bool,
    seed: u64,
) -> Result<TheoryReport> {
    let mut rng = rng::stream(seed, Domain::Theory, 2, concave as u64);
    let mut report = TheoryReport::new(Claim::Corollary1);
    let mut overflowed = 0usize;
    let mut full_length = 0usize;
    for _ in 0..problems {
        let (p, params) = QuadraticProblem::random(&mut rng, dim, concave);
        let entry = check_corollary1(&p, &params, steps, 1.0)?;
        if entry.summary.contains_key("overflow_step") {
            overflowed += 1;
        } else {
            full_length += 1;
        }
        report.absorb(entry);
    }
    report.summary.insert("problems".into(), problems as f64);
    report.summary.insert("steps".into(), steps as f64);
    report
        .summary
        .insert("trajectories_finite_throughout".into(), full_length as f64);
    report.summary.insert(
        "trajectories_continued_in_log_space".into(),
        overflowed as f64,
    );
    Ok(report)
}

/// A small random MLP problem for the curvature check: Glorot-initialised
/// means, uniform sigma, a fixed Gaussian batch with random labels.
pub struct CurvatureFixture {
    pub spec: NetworkSpec,
    pub batch: Batch,
    pub mask: HeadMask,
    pub mu: FlatWeights,
}

impl CurvatureFixture {
    pub fn new(widths: (usize, usize, usize), batch_size: usize, seed: u64) -> Result<Self> {
        let spec = NetworkSpec::new(widths.0, vec![widths.1], widths.2)?;
        let init = bgd::init_params(&spec, &bgd::OptimizerConfig::new(1.0, seed))?;
        let mut rng = rng::stream(seed, Domain::Theory, 3, 0);
        let inputs = rng::standard_normals(seed, Domain::Theory, 4, 0, batch_size * widths.0);
        let labels = (0..batch_size)
            .map(|_| rng.random_range(0..widths.2))
            .collect();
        Ok(CurvatureFixture {
            batch: Batch::new(inputs, widths.0, labels, None)?,
            mask: HeadMask::full(widths.2),
            mu: init.mu,
            spec,
        })
    }

    pub fn objective(&self) -> NetworkObjective<'_> {
        NetworkObjective {
            spec: &self.spec,
            batch: &self.batch,
            mask: &self.mask,
        }
    }

    pub fn params(&self, sigma: f64) -> VariationalParams {
        VariationalParams {
            mu: self.mu.clone(),
            sigma: vec![sigma; self.mu.len()].into(),
        }
    }
}
