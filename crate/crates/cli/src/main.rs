//! `gptape` — Gaussian process training, prediction, MCMC sampling and
//! the SVI throughput benchmark, driven by a key=value config file.

use clap::{Parser, Subcommand};
use gptape_cli::commands::{self, CommonArgs};
use gptape_cli::config::Config;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "gptape", version, about = "Gaussian process inference on a matrix tape")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model (gpr | sgpr | vgp | svgp) and write the artifact
    /// plus an optimization trace.
    Fit {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Worker threads for the linear algebra kernels.
        #[arg(long)]
        threads: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        /// Resume from a previously written model.json.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Predict at new inputs from a fitted artifact.
    Predict {
        #[arg(long)]
        artifact: PathBuf,
        /// Feature-only CSV of query points.
        #[arg(long)]
        input: PathBuf,
        /// Config with the training-data keys (needed by gpr/sgpr/vgp).
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        threads: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run HMC over a gpmc or sgpmc model and write the chain.
    Sample {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        threads: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Stochastic-variational-inference throughput sweep over thread
    /// counts and minibatch sizes.
    Bench {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run() -> gptape::Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Fit {
            config,
            seed,
            threads,
            out,
            resume,
        } => with_pool(threads, || {
            let cfg = Config::load(&config)?;
            commands::cmd_fit(&cfg, &CommonArgs { seed, out }, resume.as_deref())
        }),
        Command::Predict {
            artifact,
            input,
            config,
            seed,
            threads,
            out,
        } => with_pool(threads, || {
            let cfg = config.map(|p| Config::load(&p)).transpose()?;
            commands::cmd_predict(&artifact, &input, cfg.as_ref(), &CommonArgs { seed, out })
        }),
        Command::Sample {
            config,
            seed,
            threads,
            out,
        } => with_pool(threads, || {
            let cfg = Config::load(&config)?;
            commands::cmd_sample(&cfg, &CommonArgs { seed, out })
        }),
        Command::Bench { config, seed, out } => {
            // the sweep builds its own pools per thread count
            let cfg = match config {
                Some(p) => Config::load(&p)?,
                None => Config::default(),
            };
            commands::cmd_bench(&cfg, &CommonArgs { seed, out })
        }
    }
}

fn with_pool(
    threads: Option<usize>,
    body: impl FnOnce() -> gptape::Result<()> + Send,
) -> gptape::Result<()> {
    match threads {
        None => body(),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .map_err(|e| gptape::Error::ModelConfig(format!("thread pool: {e}")))?;
            pool.install(body)
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
