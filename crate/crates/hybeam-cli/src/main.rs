//! `hybeam`: datasets, descent, network training and experiments driven by
//! one TOML configuration.

mod commands;
mod config;
mod gradcheck;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use hybeam::Error;

use commands::Ctx;
use config::RunConfig;

#[derive(Parser)]
#[command(name = "hybeam", version, about = "Hybrid beamforming by SER minimisation and deep unfolding")]
struct Cli {
    /// TOML run configuration; defaults are used for missing keys.
    #[arg(short, long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides the config and HYBEAM_OUTPUT_DIR).
    #[arg(short, long, global = true)]
    out: Option<PathBuf>,
    /// Master seed (overrides the config).
    #[arg(short, long, global = true)]
    seed: Option<u64>,
    /// Worker threads; defaults to the available cores.
    #[arg(short, long, global = true)]
    threads: Option<usize>,
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write train, validation and test channel datasets.
    Generate,
    /// Run gradient descent on every channel of a dataset.
    Gd {
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Only the first N channels.
        #[arg(long)]
        limit: Option<usize>,
    },
    /// Train an unfolded network.
    Train {
        #[arg(long)]
        train: Option<PathBuf>,
        #[arg(long)]
        validation: Option<PathBuf>,
    },
    /// Evaluate a trained network on a dataset.
    Test {
        #[arg(long)]
        network: Option<PathBuf>,
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Run the `[experiment]` section of the config.
    Experiment,
    /// Compare closed-form gradients with finite differences.
    Gradcheck,
}

const EXIT_SCHEMA: u8 = 2;
const EXIT_IO: u8 = 3;
const EXIT_NUMERIC: u8 = 4;

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::InvalidArgument(_) | Error::Dimension(_) => EXIT_SCHEMA,
        Error::Io { .. } | Error::Format { .. } | Error::Csv(_) => EXIT_IO,
        Error::Numeric(_) | Error::Degenerate(_) => EXIT_NUMERIC,
    }
}

fn run(cli: Cli) -> hybeam::Result<()> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::Config("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(e.to_string()))?;
    }
    let warnings = cfg.validate()?;
    let out = cfg.resolve_output_dir(cli.out);
    let ctx = Ctx {
        cfg,
        out,
        verbose: cli.verbose,
    };
    for w in &warnings {
        ctx.log(&format!("warning: {w}"));
    }
    if let Command::Gradcheck = cli.command {
        return gradcheck::run(ctx.cfg.seed);
    }
    ctx.prepare_output()?;
    match cli.command {
        Command::Generate => commands::generate(&ctx),
        Command::Gd { dataset, limit } => commands::gd(&ctx, dataset, limit),
        Command::Train { train, validation } => commands::train_network(&ctx, train, validation),
        Command::Test { network, dataset } => commands::test_network(&ctx, network, dataset),
        Command::Experiment => commands::experiment(&ctx),
        Command::Gradcheck => unreachable!(),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
