//! Acceptance gate: one PASS/FAIL line per criterion, non-zero exit on any failure.
//!
//! Set `BGDLAB_MNIST_DIR` to a directory holding the four MNIST IDX files to
//! also run the full-scale reproduction (hours on one core).

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use bgdlab::bgd::{
    bgd_step, estimate_statistics, ExpectationEstimates, VariationalParams, Workers,
};
use bgdlab::config::OptimizerChoice;
use bgdlab::engine::{finite_diff_gradient, loss_and_gradient, Batch, HeadMask, NetworkSpec};
use bgdlab::experiment::{self, ExperimentOutcome, TheoryOptions};
use bgdlab::metrics::MetricsReport;
use bgdlab::presets;
use bgdlab::sgd::SgdConfig;
use bgdlab::theory::{self, QuadraticProblem};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<(bool, String), String>;

struct Gate {
    failures: usize,
}

impl Gate {
    fn check(
        &mut self,
        id: &str,
        name: &str,
        limit: Option<Duration>,
        f: impl FnOnce() -> Outcome,
    ) {
        let start = Instant::now();
        let result = f();
        let took = start.elapsed();
        let in_time = limit.is_none_or(|l| took <= l);
        let (passed, detail) = match result {
            Ok((ok, detail)) => (ok && in_time, detail),
            Err(e) => (false, format!("error: {e}")),
        };
        let limit = limit.map_or(String::new(), |l| {
            format!(" / limit {:.0} s", l.as_secs_f64())
        });
        println!(
            "[{}] {id:>2} {name}: {detail} ({:.2} s{limit})",
            if passed { "PASS" } else { "FAIL" },
            took.as_secs_f64()
        );
        if !passed {
            self.failures += 1;
        }
    }
}

fn chain(e: bgdlab::Error) -> String {
    let mut msg = e.to_string();
    let mut source = std::error::Error::source(&e);
    while let Some(s) = source {
        msg.push_str(&format!(": {s}"));
        source = s.source();
    }
    msg
}

fn secs(s: u64) -> Option<Duration> {
    Some(Duration::from_secs(s))
}

fn closed_form_update() -> Outcome {
    let p = QuadraticProblem::new(vec![1.0], vec![2.0]).map_err(chain)?;
    let params = VariationalParams::new(vec![0.0], vec![1.0]).map_err(chain)?;
    // ½(θ−2)²: E[L′] = μ − 2, E[L′ε] = σ
    let exact = ExpectationEstimates {
        g_mean: vec![-2.0],
        g_eps_mean: vec![1.0],
    };
    let next = bgd_step(&params, &exact, 1.0).map_err(chain)?;
    let golden = (5f64.sqrt() - 1.0) / 2.0;
    let (mu, sigma) = (next.mu[0], next.sigma[0]);
    let exact_ok = (mu - 2.0).abs() <= 1e-9
        && (sigma - golden).abs() <= 1e-9
        && (sigma - 0.618034).abs() < 5e-7;

    let stats =
        estimate_statistics(&p, &params, 7, 0, 100_000, &Workers::sequential()).map_err(chain)?;
    let z_g = (stats.estimates.g_mean[0] - exact.g_mean[0]).abs() / stats.g_stderr[0];
    let z_ge = (stats.estimates.g_eps_mean[0] - exact.g_eps_mean[0]).abs() / stats.g_eps_stderr[0];
    let mc = bgd_step(&params, &stats.estimates, 1.0).map_err(chain)?;
    Ok((
        exact_ok && z_g <= 5.0 && z_ge <= 5.0,
        format!(
            "exact mu'={mu:.12} sigma'={sigma:.12}; MC K=1e5 mu'={:.5} sigma'={:.5}, |z| = {z_g:.2}, {z_ge:.2} (max 5)",
            mc.mu[0], mc.sigma[0]
        ),
    ))
}

fn theorem1() -> Outcome {
    let r = theory::theorem1_battery(100, 10, 10_000, 0).map_err(chain)?;
    let min_mc = r.mc_margins.iter().copied().fold(f64::INFINITY, f64::min);
    Ok((
        r.passed && r.violations == 0 && r.checked == 100,
        format!(
            "{} problems, {} violations, min MC margin {min_mc:.4}",
            r.checked, r.violations
        ),
    ))
}

fn corollary1() -> Outcome {
    let convex = theory::corollary1_battery(100, 10, 50, false, 0).map_err(chain)?;
    let concave = theory::corollary1_battery(100, 10, 50, true, 1).map_err(chain)?;
    let continued = concave
        .summary
        .get("trajectories_continued_in_log_space")
        .copied()
        .unwrap_or(0.0);
    Ok((
        convex.passed && concave.passed && convex.violations == 0 && concave.violations == 0,
        format!(
            "convex {} trajectories / {} violations, concave {} / {} ({continued} continued in log space past f64 overflow)",
            convex.checked, convex.violations, concave.checked, concave.violations
        ),
    ))
}

fn curvature() -> Outcome {
    let r = experiment::curvature_check(&TheoryOptions::default()).map_err(chain)?;
    let small = r.summary["median_relative_error"];
    let large = r.summary["median_relative_error_sigma_1e-2"];
    Ok((
        r.passed && small < 0.05 && large > small,
        format!(
            "median relative error {:.2}% at sigma 1e-3 (max 5%), {:.2}% at 1e-2",
            100.0 * small,
            100.0 * large
        ),
    ))
}

fn random_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-scale..scale)).collect()
}

fn gradient_suite() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let nets = 60;
    let mut worst = 0.0f64;
    for _ in 0..nets {
        let input_dim = rng.random_range(1..8);
        let depth = rng.random_range(0..3);
        let hidden: Vec<usize> = (0..depth).map(|_| rng.random_range(1..10)).collect();
        let heads = rng.random_range(2..7);
        let spec = NetworkSpec::new(input_dim, hidden, heads).map_err(chain)?;
        let w = random_vec(&mut rng, spec.num_params(), 1.0);
        let rows = rng.random_range(1..12);
        let x = random_vec(&mut rng, rows * input_dim, 2.0);
        let allowed: Vec<usize> = (0..heads).filter(|_| rng.random_bool(0.7)).collect();
        let (allowed, mask) = if allowed.is_empty() {
            ((0..heads).collect(), HeadMask::full(heads))
        } else {
            let mask = HeadMask::new(allowed.clone(), heads).map_err(chain)?;
            (allowed, mask)
        };
        let labels = (0..rows)
            .map(|_| allowed[rng.random_range(0..allowed.len())])
            .collect();
        let batch = Batch::new(x, input_dim, labels, None).map_err(chain)?;
        let (_, grad) = loss_and_gradient(&spec, &w, &batch, &mask).map_err(chain)?;
        let fd = finite_diff_gradient(&spec, &w, &batch, &mask, 1e-5).map_err(chain)?;
        for (a, b) in grad.iter().zip(fd.iter()) {
            let scale = a.abs().max(b.abs());
            if scale > 0.0 {
                worst = worst.max((a - b).abs() / scale.max(1e-6));
            }
        }
    }
    Ok((
        worst < 1e-4,
        format!("{nets} random nets, max relative error {worst:.2e} at h=1e-5 (max 1e-4)"),
    ))
}

fn run_preset(name: &str) -> Result<ExperimentOutcome, String> {
    let cfg = presets::by_name(name).map_err(chain)?;
    experiment::run_experiment(&cfg).map_err(|e| format!("{name}: {}", chain(e)))
}

fn mean_final(o: &ExperimentOutcome) -> f64 {
    100.0 * o.aggregate.final_avg_accuracy_mean
}

fn forgetting_gap(bgd_runs: &mut Option<Vec<MetricsReport>>) -> Outcome {
    let bgd = run_preset("desk-permuted-bgd")?;
    let sgd = run_preset("desk-permuted-sgd")?;
    let (b, s) = (mean_final(&bgd), mean_final(&sgd));
    *bgd_runs = Some(bgd.runs);
    let mut best = (0.0, 0.0);
    for lr in [0.01, 0.03, 0.3] {
        let mut cfg = presets::by_name("desk-permuted-sgd").map_err(chain)?;
        cfg.optimizer = OptimizerChoice::Sgd(SgdConfig { learning_rate: lr });
        let acc = mean_final(&experiment::run_experiment(&cfg).map_err(chain)?);
        if acc > best.1 {
            best = (lr, acc);
        }
    }
    Ok((
        b - s >= 10.0,
        format!(
            "BGD {b:.2}% vs step-matched SGD {s:.2}% over 3 seeds, gap {:+.2} (min +10); \
             not gating: best other SGD lr {} {:.2}%, gap {:+.2}",
            b - s,
            best.0,
            best.1,
            b - best.1
        ),
    ))
}

fn sigma_drift(bgd_runs: &Option<Vec<MetricsReport>>) -> Outcome {
    let runs = bgd_runs.as_ref().ok_or("permuted BGD run unavailable")?;
    let mut ok = true;
    let mut parts = Vec::new();
    for run in runs {
        let first = run
            .sigma_summaries
            .iter()
            .find(|s| {
                let c = &run.checkpoints[s.checkpoint];
                c.at_boundary && c.iteration > 0
            })
            .ok_or("no summary after the first task")?;
        let last = run.sigma_summaries.last().ok_or("no sigma summaries")?;
        ok &= last.fraction_below_half_init > first.fraction_below_half_init && last.median > 1e-4;
        parts.push(format!(
            "seed {}: below half init {:.1}% -> {:.1}%, median {:.2e}",
            run.seed,
            100.0 * first.fraction_below_half_init,
            100.0 * last.fraction_below_half_init,
            last.median
        ));
    }
    Ok((ok, parts.join("; ")))
}

fn labels_trick() -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for opt in ["bgd", "sgd"] {
        let off = mean_final(&run_preset(&format!("desk-split-{opt}"))?);
        let on = mean_final(&run_preset(&format!("desk-split-{opt}-labels-trick"))?);
        ok &= on - off >= 10.0;
        parts.push(format!("{opt} {off:.2}% -> {on:.2}% ({:+.2})", on - off));
    }
    Ok((ok, format!("{} (min +10 each)", parts.join(", "))))
}

fn continuous() -> Outcome {
    let b = mean_final(&run_preset("desk-continuous-bgd")?);
    let s = mean_final(&run_preset("desk-continuous-sgd")?);
    Ok((
        b - s >= 5.0,
        format!(
            "BGD {b:.2}% vs SGD {s:.2}% over 3 seeds, gap {:+.2} (min +5)",
            b - s
        ),
    ))
}

fn runtime_scaling() -> Outcome {
    let r = experiment::runtime_scaling_check(&TheoryOptions::default()).map_err(chain)?;
    let t = |k: usize| r.summary[&format!("epoch_seconds_k{k}")];
    Ok((
        r.passed && r.summary["r_squared"] >= 0.95,
        format!(
            "epoch seconds K=2 {:.3}, K=4 {:.3}, K=10 {:.3}; R² {:.4} (min 0.95)",
            t(2),
            t(4),
            t(10),
            r.summary["r_squared"]
        ),
    ))
}

fn full_scale(dir: PathBuf) -> Outcome {
    let cls =
        experiment::run_experiment(&presets::mnist_classification(&dir, 20)).map_err(chain)?;
    let split =
        experiment::run_experiment(&presets::mnist_split_labels_trick(&dir)).map_err(chain)?;
    let (a, s) = (mean_final(&cls), mean_final(&split));
    Ok((
        (a - 98.26).abs() <= 0.4 && (40.0..=55.0).contains(&s),
        format!("MNIST accuracy {a:.2}% (98.26 ± 0.4), split labels trick {s:.2}% (40-55)"),
    ))
}

fn main() -> ExitCode {
    let mut gate = Gate { failures: 0 };
    gate.check("1", "closed-form update", secs(1), closed_form_update);
    gate.check("2", "strong-convexity bound battery", secs(10), theorem1);
    gate.check("3", "monotone sigma trajectories", secs(10), corollary1);
    gate.check("4", "curvature approximation", secs(120), curvature);
    gate.check(
        "5",
        "gradient engine finite differences",
        secs(60),
        gradient_suite,
    );
    let mut bgd_runs = None;
    gate.check("6", "permuted forgetting gap", secs(900), || {
        forgetting_gap(&mut bgd_runs)
    });
    gate.check("7", "labels trick direction", secs(600), labels_trick);
    gate.check("8", "sigma histogram drift", None, || {
        sigma_drift(&bgd_runs)
    });
    gate.check("9", "continuous task-agnostic", secs(900), continuous);
    gate.check("10", "runtime scaling in K", None, runtime_scaling);
    match std::env::var_os("BGDLAB_MNIST_DIR") {
        Some(dir) => gate.check("11", "full-scale reproduction", None, || {
            full_scale(dir.into())
        }),
        None => println!("[SKIP] 11 full-scale reproduction: set BGDLAB_MNIST_DIR to run"),
    }
    if gate.failures == 0 {
        println!("acceptance: all criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: {} criteria failed", gate.failures);
        ExitCode::FAILURE
    }
}
