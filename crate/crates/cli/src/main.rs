//! `camforge`: render scene datasets through configurable camera models and
//! evaluate object-detection results on the output.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use camforge_core::error::{Error, Result};
use clap::{Parser, Subcommand};

use config::ExperimentConfig;

#[derive(Parser)]
#[command(
    name = "camforge",
    version,
    about = "Camera image-formation simulator and detection-evaluation toolkit",
    after_help = "Set CAMFORGE_LOG=error|info|debug to control diagnostics."
)]
struct Cli {
    /// Experiment config file (flat key=value with dotted sections).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Worker threads (default: all cores). Output does not depend on this.
    #[arg(long, global = true)]
    jobs: Option<usize>,

    /// Override the experiment seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Override the output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Render the configured dataset through the sensor and ISP.
    Simulate,
    /// Generate one-parameter dataset variants.
    Variants,
    /// Evaluate per-scene detection CSVs against a dataset's labels.
    Eval,
    /// Build a train/eval AP table with an asymmetry report from a cells CSV
    /// (header: train,eval,ap,count).
    Matrix {
        /// CSV of measured cells.
        cells: PathBuf,
    },
    /// Block-averaged kernel distance between two feature CSVs
    /// (one vector per row).
    Kid {
        /// First feature set.
        features_a: PathBuf,
        /// Second feature set.
        features_b: PathBuf,
        /// Vectors per block.
        #[arg(long, default_value_t = 100)]
        block_size: usize,
    },
    /// Count distinct dark levels in every raw frame of a dataset.
    Census {
        /// Dataset manifest whose frames to inspect.
        manifest: PathBuf,
        /// Fraction of full scale counted as "dark".
        #[arg(long, default_value_t = 0.03125)]
        fraction: f64,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(
        env_logger::Env::new().filter_or("CAMFORGE_LOG", "error"),
    )
    .format_timestamp(None)
    .init();
    let cli = Cli::parse();
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            eprintln!("error: --jobs must be at least 1");
            return ExitCode::FAILURE;
        }
        // Ignore the error when a pool already exists (tests, repeat calls).
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global();
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match &cli.cmd {
        Cmd::Simulate | Cmd::Variants | Cmd::Eval => {
            let name = match &cli.cmd {
                Cmd::Simulate => "simulate",
                Cmd::Variants => "variants",
                _ => "eval",
            };
            let path = cli.config.as_ref().ok_or_else(|| {
                Error::invalid(format!("{name} requires --config <file>"))
            })?;
            let mut cfg = ExperimentConfig::load(path)?;
            if let Some(seed) = cli.seed {
                cfg.seed = seed;
            }
            if let Some(out) = &cli.out {
                cfg.out_dir = out.clone();
            }
            std::fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::io(&cfg.out_dir, e))?;
            let echo = cfg.echo();
            let echo_path = cfg.out_dir.join("resolved-config.txt");
            std::fs::write(&echo_path, &echo).map_err(|e| Error::io(&echo_path, e))?;

            let started = Instant::now();
            match &cli.cmd {
                Cmd::Simulate => commands::cmd_simulate(&cfg)?,
                Cmd::Variants => commands::cmd_variants(&cfg)?,
                _ => commands::cmd_eval(&cfg)?,
            }

            // run.log carries wall time, so determinism comparisons must
            // skip it; everything else in the tree is bit-stable.
            let log_path = cfg.out_dir.join("run.log");
            let log = format!(
                "command={name}\nversion={}\nwall_ms={}\n--- resolved config ---\n{echo}",
                env!("CARGO_PKG_VERSION"),
                started.elapsed().as_millis()
            );
            std::fs::write(&log_path, log).map_err(|e| Error::io(&log_path, e))?;
            Ok(())
        }
        Cmd::Matrix { cells } => commands::cmd_matrix(cells, cli.out.as_deref()),
        Cmd::Kid {
            features_a,
            features_b,
            block_size,
        } => commands::cmd_kid(features_a, features_b, *block_size, cli.seed.unwrap_or(0)),
        Cmd::Census { manifest, fraction } => commands::cmd_census(manifest, *fraction),
    }
}
