//! `bfenkf`: train a bi-fidelity surrogate, run ensemble Kalman inversions
//! with it or with either fidelity alone, validate the error bound, and sweep
//! over seeds.
//!
//! Exit codes: 0 success, 2 configuration or artifact error, 3 solver
//! failure, 4 failed `--check`.

use std::path::PathBuf;
use std::process::ExitCode;

use bfenkf::experiment::{
    check_inversion, cmd_invert, cmd_sweep, cmd_train, cmd_validate, CaseConfig, CaseKind, Mode,
};
use bfenkf::Error;
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "bfenkf", version, about = "Bi-fidelity iterative ensemble Kalman inversion")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML config; keys not given fall back to the preset named by `case`.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Preset used when no config file is given.
    #[arg(long, value_enum, default_value = "case1")]
    case: CaseArg,
    /// Master seed (overrides the config).
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; 0 lets the pool decide.
    #[arg(long, default_value_t = 0)]
    threads: usize,
    /// Output directory (overrides the config).
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Compare the result against the config's `check` thresholds and exit
    /// with 4 when it misses them.
    #[arg(long)]
    check: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum CaseArg {
    Case1,
    FieldAnalog,
    LinearOracle,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Bf,
    Lf,
    Hf,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Bf => Mode::Bf,
            ModeArg::Lf => Mode::Lf,
            ModeArg::Hf => Mode::Hf,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Offline phase: candidate LF solves, greedy selection, HF solves.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// One inversion with the chosen propagator.
    Invert {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "bf")]
        mode: ModeArg,
        /// Model archive (default `<out>/bf_model.bin`).
        #[arg(long, value_name = "PATH")]
        model: Option<PathBuf>,
    },
    /// Measured BF error against the a-priori bound at fresh points.
    Validate {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "PATH")]
        model: Option<PathBuf>,
        #[arg(long, default_value_t = 20)]
        n_test: usize,
    },
    /// Inversions over several seeds with median and quartile aggregates.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "bf")]
        mode: ModeArg,
        #[arg(long, value_name = "PATH")]
        model: Option<PathBuf>,
        /// Comma-separated seeds (default: five consecutive seeds from the
        /// master seed).
        #[arg(long, value_delimiter = ',', num_args = 1..)]
        seeds: Option<Vec<u64>>,
    },
}

enum Failure {
    Run(Error),
    Check(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Run(e)
    }
}

fn resolve(common: &Common) -> Result<CaseConfig, Error> {
    let mut cfg = match &common.config {
        Some(path) => CaseConfig::load(path)?,
        None => CaseConfig::preset(match common.case {
            CaseArg::Case1 => CaseKind::Case1,
            CaseArg::FieldAnalog => CaseKind::FieldAnalog,
            CaseArg::LinearOracle => CaseKind::LinearOracle,
        }),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.out_dir = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn verdict(ok: bool, what: String) -> Result<(), Failure> {
    if ok {
        println!("check passed: {what}");
        Ok(())
    } else {
        Err(Failure::Check(what))
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let common = match &cli.command {
        Command::Train { common }
        | Command::Invert { common, .. }
        | Command::Validate { common, .. }
        | Command::Sweep { common, .. } => common,
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(common.threads)
        .build_global()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    let cfg = resolve(common)?;

    match cli.command {
        Command::Train { .. } => {
            let out = cmd_train(&cfg)?;
            println!(
                "trained {}-member basis ({}); manifest {}",
                out.model.basis_size(),
                out.model.stop_reason().as_str(),
                out.manifest_path.display()
            );
        }
        Command::Invert { mode, model, common } => {
            let mode = Mode::from(mode);
            let out = cmd_invert(&cfg, model.as_deref(), mode)?;
            let e = out.state.final_error().map_or(f64::NAN, |e| e.plain);
            println!(
                "{} inversion: {} iterations, converged {}, relative error {e:.4e}; {}",
                mode.as_str(),
                out.state.iteration,
                out.state.converged,
                out.csv_path.display()
            );
            if common.check {
                verdict(
                    check_inversion(&cfg, mode, e),
                    format!("{} final error {e:.4e}", mode.as_str()),
                )?;
            }
        }
        Command::Validate { model, n_test, common } => {
            let out = cmd_validate(&cfg, model.as_deref(), n_test, cfg.seed)?;
            let frac = out.fraction_held();
            println!("bound held at {frac:.3} of {n_test} points; {}", out.csv_path.display());
            if common.check {
                verdict(
                    frac >= cfg.check.validate_min_fraction,
                    format!("bound-holds fraction {frac:.3}"),
                )?;
            }
        }
        Command::Sweep { mode, model, seeds, common } => {
            let mode = Mode::from(mode);
            let seeds = seeds.unwrap_or_else(|| (0..5).map(|i| cfg.seed.wrapping_add(i)).collect());
            let out = cmd_sweep(&cfg, model.as_deref(), mode, &seeds)?;
            let med = out.median_final_error();
            println!(
                "{} sweep over {} seeds: median final error {med:.4e}; {}",
                mode.as_str(),
                seeds.len(),
                out.aggregate_path.display()
            );
            if common.check {
                verdict(
                    check_inversion(&cfg, mode, med),
                    format!("{} median final error {med:.4e}", mode.as_str()),
                )?;
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Check(what)) => {
            eprintln!("check failed: {what}");
            ExitCode::from(4)
        }
        Err(Failure::Run(e)) => {
            eprintln!("error: {e}");
            let mut src = std::error::Error::source(&e);
            while let Some(s) = src {
                eprintln!("  caused by: {s}");
                src = s.source();
            }
            ExitCode::from(match e {
                Error::Config { .. } | Error::Budget(_) | Error::Artifact { .. } => 2,
                _ => 3,
            })
        }
    }
}
