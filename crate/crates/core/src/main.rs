use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};

use chemostokes::cli::{execute, exit_code, load_config, Mode};
use chemostokes::Error;

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    Simulate,
    Fixpoint,
    Glue,
    Verify,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Simulate => Mode::Simulate,
            ModeArg::Fixpoint => Mode::Fixpoint,
            ModeArg::Glue => Mode::Glue,
            ModeArg::Verify => Mode::Verify,
        }
    }
}

/// Spectral-Galerkin runs of the stochastic chemotaxis-Stokes system.
#[derive(Debug, Parser)]
#[command(version)]
struct Args {
    mode: ModeArg,
    /// TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides `out`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master seed (overrides `master_seed`).
    #[arg(long)]
    seed: Option<u64>,
    /// Number of paths (overrides `paths`).
    #[arg(long)]
    paths: Option<usize>,
    /// Comma-separated thresholds; the first one is also the run threshold.
    #[arg(long, value_delimiter = ',')]
    kappa: Option<Vec<f64>>,
}

fn run(args: Args) -> Result<i32, Error> {
    let mut config = load_config(&args.config)?;
    if let Some(out) = args.out {
        config.out = out;
    }
    if let Some(seed) = args.seed {
        config.master_seed = seed;
    }
    if let Some(paths) = args.paths {
        config.paths = paths;
    }
    if let Some(kappas) = args.kappa {
        let first = *kappas.first().ok_or_else(|| Error::Config("empty --kappa list".into()))?;
        config.kappa = first;
        config.kappas = kappas;
    }
    let mode = Mode::from(args.mode);
    config.mode = Some(mode);
    let setup = config.setup()?;
    let outcome = execute(&setup, mode, &setup.config.out)?;
    Ok(outcome.code())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args = Args::parse();
    let code = match run(args) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    };
    ExitCode::from(code as u8)
}
