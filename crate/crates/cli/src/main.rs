mod commands;
mod config;
mod output;

use std::io::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::commands::{Context, Runner};
use crate::config::ExperimentConfig;

const SEED_ENV: &str = "CQED_LAB_SEED";
const DEFAULT_OUT: &str = "cqed-lab-out";

#[derive(Parser)]
#[command(name = "cqed-lab", version, about = "Emitter-cavity simulation and coupling-strength extraction pipeline")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct GlobalArgs {
    /// Experiment configuration (TOML).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output directory; overrides `[output] dir`.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Worker threads; 1 runs sequentially.
    #[arg(long, global = true, value_name = "N", value_parser = clap::value_parser!(u64).range(1..))]
    jobs: Option<u64>,
    /// Noise seed; falls back to `[output] seed`, then $CQED_LAB_SEED, then 0.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Only log errors.
    #[arg(long, global = true)]
    quiet: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Forward-model a detuning sweep: mean decay rates and emission spectra.
    SimulateSweep,
    /// Fit Lorentzian pairs to spectra and classify crossing vs anti-crossing.
    FitSpectra {
        /// Spectrum files; defaults to `[fit] spectra`.
        files: Vec<PathBuf>,
    },
    /// Fit exponential decays to time-resolved curves.
    FitDecay {
        /// Decay files; defaults to `[fit] decays`.
        files: Vec<PathBuf>,
    },
    /// Compare the coupling strength from a cavity spectrum with the one from a decay rate.
    CompareG {
        /// Cavity spectrum; defaults to `[fit] jc_spectrum`.
        #[arg(long, value_name = "PATH")]
        spectrum: Option<PathBuf>,
        /// Decay curve; defaults to the first of `[fit] decays`.
        #[arg(long, value_name = "PATH")]
        decay: Option<PathBuf>,
    },
    /// Remove the spectral instrument response from spectra.
    Deconvolve {
        /// Spectrum files; defaults to `[fit] spectra`.
        files: Vec<PathBuf>,
    },
    /// Write noisy synthetic spectra and decay curves with ground-truth sidecars.
    Synthesize,
}

fn init_logging(quiet: bool) {
    let level = if quiet { log::LevelFilter::Error } else { log::LevelFilter::Info };
    env_logger::Builder::new()
        .filter_level(level)
        .format(|buf, record| writeln!(buf, "[{} {}] {}", record.level(), record.target(), record.args()))
        .target(env_logger::Target::Stderr)
        .init();
}

fn resolve_seed(flag: Option<u64>, config: Option<u64>) -> Result<u64, String> {
    if let Some(s) = flag.or(config) {
        return Ok(s);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v.trim().parse().map_err(|_| format!("{SEED_ENV}='{v}' is not an unsigned integer")),
        Err(_) => Ok(0),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging(cli.global.quiet);

    let Some(config_path) = cli.global.config.as_deref() else {
        log::error!(target: "config", "--config PATH is required");
        return ExitCode::from(2);
    };
    let config = match ExperimentConfig::load(config_path) {
        Ok(c) => c,
        Err(e) => {
            log::error!(target: "config", "{e}");
            return ExitCode::from(2);
        }
    };
    let seed = match resolve_seed(cli.global.seed, config.seed) {
        Ok(s) => s,
        Err(e) => {
            log::error!(target: "config", "{e}");
            return ExitCode::from(2);
        }
    };
    let runner = match Runner::new(cli.global.jobs.map(|j| j as usize)) {
        Ok(r) => r,
        Err(e) => {
            log::error!(target: "config", "{e:#}");
            return ExitCode::from(2);
        }
    };
    let out = cli.global.out.clone().or_else(|| config.output_dir.clone()).unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
    let ctx = Context { config, out, seed, runner };

    let result = match cli.command {
        Command::SimulateSweep => commands::simulate_sweep(&ctx),
        Command::FitSpectra { files } => commands::fit_spectra(&ctx, files),
        Command::FitDecay { files } => commands::fit_decay(&ctx, files),
        Command::CompareG { spectrum, decay } => commands::compare_g(&ctx, spectrum, decay),
        Command::Deconvolve { files } => commands::deconvolve(&ctx, files),
        Command::Synthesize => commands::synthesize(&ctx),
    };
    match result {
        Ok(outcome) if outcome.failures == 0 => ExitCode::SUCCESS,
        Ok(outcome) => {
            log::error!(target: "pipeline", "{} stage(s) failed", outcome.failures);
            ExitCode::from(1)
        }
        Err(e) if e.is::<commands::UsageError>() => {
            log::error!(target: "config", "{e:#}");
            ExitCode::from(2)
        }
        Err(e) => {
            log::error!(target: "pipeline", "{e:#}");
            ExitCode::from(1)
        }
    }
}
