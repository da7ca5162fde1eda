mod commands;
mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use procnet::Error;

use crate::config::RunConfig;

#[derive(Parser)]
#[command(name = "procnet", version, about = "Predictive-coding segmentation and silhouette pose tracking")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// run configuration file (INI sections of key = value)
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[arg(long, global = true)]
    seed: Option<u64>,

    /// output directory
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// worker threads for parallel sections
    #[arg(long, global = true, env = "PROCNET_THREADS")]
    threads: Option<usize>,

    /// masks fed to the tracker
    #[arg(long, global = true, value_parser = ["procnet", "corrupted-truth"])]
    mask_source: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic sequence dataset
    GenData,
    /// Train a network on a dataset
    Train {
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Train and score a grid of network configurations
    Grid {
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// held-out dataset; defaults to the tail of --dataset
        #[arg(long)]
        heldout: Option<PathBuf>,
    },
    /// Track the pose through one sequence
    Track {
        #[arg(long)]
        sequence: Option<PathBuf>,
        #[arg(long)]
        weights: Option<PathBuf>,
    },
    /// Track every sequence of a dataset and tabulate pose errors by bin
    Benchmark {
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        weights: Option<PathBuf>,
    },
    /// Gradient, overlap and rasterizer self-checks
    Selfcheck {
        #[arg(long, hide = true, default_value_t = 0.0)]
        perturb_gradient: f32,
    },
}

enum Failure {
    Usage(String),
    Run(Error),
    Checks(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Run(e)
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io(_) => 2,
        Error::NumericFailure(_) => 3,
        Error::InvalidArgument(_) | Error::InvalidState(_) | Error::InvalidConfiguration(_) | Error::Parse(_) => 1,
    }
}

fn pick(flag: Option<PathBuf>, config: &Option<PathBuf>, what: &str) -> Result<PathBuf, Failure> {
    flag.or_else(|| config.clone()).ok_or_else(|| Failure::Usage(format!("--{what} is required")))
}

fn run(cli: Cli) -> Result<String, Failure> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(m) = &cli.mask_source {
        cfg.benchmark.mask_source = m.parse()?;
    }
    let threads = cli.threads.unwrap_or(cfg.threads);
    if threads > 0 {
        // a pool may already exist when invoked in-process; the first one wins
        let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    }
    let out = || pick(cli.out.clone(), &cfg.paths.out, "out");
    let outcome = match cli.command {
        Command::GenData => commands::gen_data(&cfg, &out()?)?,
        Command::Train { dataset } => {
            commands::train_cmd(&cfg, &pick(dataset, &cfg.paths.dataset, "dataset")?, &out()?)?
        }
        Command::Grid { dataset, heldout } => {
            let heldout = heldout.or_else(|| cfg.paths.heldout.clone());
            commands::grid(&cfg, &pick(dataset, &cfg.paths.dataset, "dataset")?, heldout.as_deref(), &out()?)?
        }
        Command::Track { sequence, weights } => {
            let weights = weights.or_else(|| cfg.paths.weights.clone());
            let seq = pick(sequence, &cfg.paths.sequence, "sequence")?;
            commands::track_cmd(&cfg, &seq, weights.as_deref(), &out()?)?
        }
        Command::Benchmark { dataset, weights } => {
            let weights = weights.or_else(|| cfg.paths.weights.clone());
            let data = pick(dataset, &cfg.paths.dataset, "dataset")?;
            commands::benchmark_cmd(&cfg, &data, weights.as_deref().map(Path::new), &out()?)?
        }
        Command::Selfcheck { perturb_gradient } => commands::selfcheck_cmd(perturb_gradient)?,
    };
    if outcome.ok {
        Ok(outcome.text)
    } else {
        Err(Failure::Checks(outcome.text))
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(text) => {
            println!("{text}");
            ExitCode::SUCCESS
        }
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Run(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
        Err(Failure::Checks(text)) => {
            println!("{text}");
            ExitCode::from(3)
        }
    }
}
