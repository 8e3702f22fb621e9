use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use lshaped_cli::{
    cmd_bench, cmd_generate, cmd_report, cmd_solve, cmd_train, ExperimentConfig, Method,
};

#[derive(Parser)]
#[command(
    name = "lshaped",
    about = "Benchmark harness for exact and surrogate-driven two-stage stochastic solvers",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; defaults to the current directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the config's base seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the config's per-run wall-clock limit in seconds.
    #[arg(long)]
    time_limit: Option<f64>,
}

impl Common {
    fn load(&self) -> Result<(ExperimentConfig, PathBuf)> {
        let mut config = ExperimentConfig::load(&self.config)?;
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        if let Some(limit) = self.time_limit {
            config.time_limit_secs = Some(limit);
        }
        let out = self.out.clone().unwrap_or_else(|| PathBuf::from("."));
        std::fs::create_dir_all(&out)
            .with_context(|| format!("creating output directory {}", out.display()))?;
        Ok((config, out))
    }
}

#[derive(Subcommand)]
enum Command {
    /// Write evaluation instances, labeled datasets, and a manifest.
    Generate {
        #[command(flatten)]
        common: Common,
    },
    /// Train the per-family predictors from generated datasets.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Run one method on one instance file; prints the result as JSON.
    Solve {
        #[command(flatten)]
        common: Common,
        /// Instance file in the stochastic-model JSON schema.
        #[arg(long)]
        instance: PathBuf,
        #[arg(long, value_enum)]
        method: Method,
    },
    /// Solve every configured method over fresh evaluation instances and
    /// aggregate the results.
    Bench {
        #[command(flatten)]
        common: Common,
        /// Method the ratio columns compare against.
        #[arg(long, value_enum)]
        baseline: Option<Method>,
        /// Worker threads; defaults to the available parallelism.
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Re-aggregate saved per-instance records into tables.
    Report {
        /// records.json produced by `bench`.
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum, default_value = "alt-l")]
        baseline: Method,
    },
}

fn default_jobs() -> usize {
    std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
}

fn run() -> Result<()> {
    match Cli::parse().command {
        Command::Generate { common } => {
            let (config, out) = common.load()?;
            let manifest = cmd_generate(&config, &out)?;
            println!(
                "wrote {} files to {} (config {})",
                manifest.files.len() + 1,
                out.display(),
                &manifest.config_sha256[..12]
            );
        }
        Command::Train { common } => {
            let (config, out) = common.load()?;
            let rows = cmd_train(&config, &out)?;
            for row in rows {
                let errors: Vec<String> = row
                    .test_are_percent
                    .iter()
                    .map(|e| format!("{e:.3}%"))
                    .collect();
                println!(
                    "{}: {} epochs{}, test abs. rel. error [{}]",
                    row.target,
                    row.epochs_run,
                    if row.stopped_early {
                        " (early stop)"
                    } else {
                        ""
                    },
                    errors.join(", ")
                );
            }
        }
        Command::Solve {
            common,
            instance,
            method,
        } => {
            let (config, out) = common.load()?;
            let result = cmd_solve(&config, &out, &instance, method)?;
            println!("{}", serde_json::to_string_pretty(&result)?);
        }
        Command::Bench {
            common,
            baseline,
            jobs,
        } => {
            let (config, out) = common.load()?;
            let baseline = baseline.unwrap_or(config.baseline);
            let jobs = jobs.unwrap_or_else(default_jobs);
            let output = cmd_bench(&config, &out, baseline, jobs)?;
            if output.n_failures > 0 {
                eprintln!(
                    "{} of {} runs failed and were excluded from aggregates",
                    output.n_failures,
                    output.records.len()
                );
            }
            println!("{}", lshaped_core::report::render_text(&output.rows));
        }
        Command::Report { input, baseline } => {
            let rendered = cmd_report(&input, &[], baseline)?;
            println!("{rendered}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
