use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use bgdlab::config::ExperimentConfig;
use bgdlab::experiment::{self, TheoryCommand, TheoryOptions};
use bgdlab::metrics::{self, AggregateReport, MetricsReport};
use bgdlab::presets;
use clap::{Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(
    name = "bgdlab",
    version,
    about = "Bayesian gradient descent continual-learning lab"
)]
struct Cli {
    /// Directory that relative output paths are resolved against.
    #[arg(
        long,
        env = "BGDLAB_OUTPUT_ROOT",
        default_value = "runs",
        global = true
    )]
    output_root: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the experiment described by a TOML config.
    Run {
        config: PathBuf,
        /// Override the config's output directory.
        #[arg(long)]
        output_dir: Option<PathBuf>,
        /// Override the config's seeds (comma separated).
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        /// Run the seeds concurrently.
        #[arg(long)]
        parallel_seeds: bool,
    },
    /// Print a preset experiment config as TOML.
    Preset {
        /// Preset name; omit to list the available presets.
        name: Option<String>,
    },
    /// Run an analytic check, write its JSON report, and exit non-zero if it fails.
    Theory {
        #[arg(value_parser = parse_check)]
        check: TheoryCommand,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Threads for the Monte Carlo estimates.
        #[arg(long, default_value_t = 1)]
        workers: usize,
        /// Report path (default: <output-root>/theory/<check>.json).
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Summarise the per-seed reports written by `run`.
    Report { dir: PathBuf },
}

fn parse_check(s: &str) -> Result<TheoryCommand, String> {
    s.parse().map_err(|e: bgdlab::Error| e.to_string())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Run {
            config,
            output_dir,
            seeds,
            parallel_seeds,
        } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(seeds) = seeds {
                cfg.seeds = seeds;
            }
            cfg.parallel_seeds |= parallel_seeds;
            let dir = output_dir.unwrap_or_else(|| cfg.output_dir(Some(&cli.output_root)));
            log::info!("running {} with seeds {:?}", cfg.label, cfg.seeds);
            let outcome = experiment::run_experiment(&cfg)
                .with_context(|| format!("running {}", config.display()))?;
            experiment::write_outcome(&outcome, &dir)?;
            std::fs::write(dir.join("config.toml"), cfg.to_toml_string()?)
                .with_context(|| format!("writing config copy to {}", dir.display()))?;
            print_summary(&outcome.runs, &outcome.aggregate);
            println!("reports written to {}", dir.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Preset { name: None } => {
            for name in presets::NAMES {
                println!("{name}");
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Preset { name: Some(name) } => {
            print!("{}", presets::by_name(&name)?.to_toml_string()?);
            Ok(ExitCode::SUCCESS)
        }
        Command::Theory {
            check,
            seed,
            workers,
            output,
        } => {
            let opts = TheoryOptions {
                seed,
                workers,
                ..TheoryOptions::default()
            };
            let report = experiment::run_theory(check, &opts)?;
            let path = output.unwrap_or_else(|| {
                cli.output_root
                    .join("theory")
                    .join(format!("{}.json", check.name()))
            });
            if let Some(parent) = path.parent() {
                std::fs::create_dir_all(parent)
                    .with_context(|| format!("creating {}", parent.display()))?;
            }
            std::fs::write(&path, serde_json::to_string_pretty(&report)?)
                .with_context(|| format!("writing {}", path.display()))?;
            println!(
                "{}: {} ({} checked, {} violations)",
                check.name(),
                if report.passed { "PASS" } else { "FAIL" },
                report.checked,
                report.violations
            );
            for (k, v) in &report.summary {
                println!("  {k} = {v}");
            }
            for note in report.notes.iter().take(10) {
                println!("  note: {note}");
            }
            println!("report written to {}", path.display());
            Ok(if report.passed {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            })
        }
        Command::Report { dir } => {
            let runs = read_runs(&dir)?;
            let label = runs[0].label.clone();
            print_summary(&runs, &AggregateReport::from_runs(&label, &runs));
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn read_runs(dir: &Path) -> Result<Vec<MetricsReport>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension().is_some_and(|x| x == "json")
                && p.file_name()
                    .is_some_and(|n| n.to_string_lossy().starts_with("seed_"))
        })
        .collect();
    paths.sort();
    if paths.is_empty() {
        bail!("no seed_*.json reports in {}", dir.display());
    }
    paths
        .iter()
        .map(|p| metrics::read_report_json(p).map_err(Into::into))
        .collect()
}

fn pct(x: f64) -> String {
    format!("{:6.2}", 100.0 * x)
}

fn print_summary(runs: &[MetricsReport], agg: &AggregateReport) {
    println!("{}", agg.label);
    for run in runs {
        let last = run
            .per_task_accuracy
            .last()
            .map(|row| row.iter().map(|&a| pct(a)).collect::<Vec<_>>());
        let gaps = metrics::forgetting_gap(&run.per_task_accuracy)
            .map(|g| g.iter().map(|&a| pct(a)).collect::<Vec<_>>().join(" "))
            .unwrap_or_else(|_| "-".into());
        println!(
            "  seed {:>5}: final avg {}%  per task [{}]  forgetting [{}]",
            run.seed,
            run.final_avg_accuracy().map_or("-".into(), pct),
            last.map_or(String::new(), |v| v.join(" ")),
            gaps
        );
        if let Some(s) = run.sigma_summaries.last() {
            println!(
                "              sigma median {:.3e}, below half init {:.1}%",
                s.median,
                100.0 * s.fraction_below_half_init
            );
        }
    }
    println!(
        "  mean over {} seeds: {}% ± {}",
        agg.seeds.len(),
        pct(agg.final_avg_accuracy_mean),
        pct(agg.final_avg_accuracy_std).trim()
    );
}
