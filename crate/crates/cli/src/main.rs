mod config;
mod experiments;
mod manifest;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use brachx_core::figures::{run_figure, FigureConfig, Scale};
use brachx_core::NumericPolicy;
use clap::{Parser, Subcommand};
use serde_json::{json, Value};

use config::{ExperimentConfig, Overrides};
use manifest::RunManifest;

pub const POLICY_ENV: &str = "BRACHX_NUM_POLICY";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Io(_) => 1,
        }
    }
}

impl From<brachx_core::Error> for CliError {
    fn from(e: brachx_core::Error) -> Self {
        if e.is_numerical() {
            CliError::Numerical(e.to_string())
        } else {
            CliError::Validation(e.to_string())
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "brachx", version, about = "Time-optimal unitary flows on SU(n): simulation, boundary-value solves and stability diagnostics")]
struct Cli {
    /// Worker threads for sample-parallel work (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Root seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one experiment from a JSON config and/or flags.
    Run {
        /// Experiment config (JSON).
        #[arg(value_name = "CONFIG", conflicts_with = "config")]
        config_pos: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Experiment kind; overrides the config's `kind`.
        #[arg(long)]
        kind: Option<String>,
        /// Algebra dimension; sets `parameters.n`.
        #[arg(long)]
        n: Option<usize>,
        /// Integration tolerance; sets `parameters.tol`.
        #[arg(long)]
        tol: Option<f64>,
    },
    /// Regenerate the data behind one of the figures.
    Figure {
        #[arg(value_parser = clap::value_parser!(u8).range(1..=4))]
        figure: u8,
        /// `desk` for a quick run, `paper` for full sample counts.
        #[arg(long, default_value = "desk")]
        scale: Scale,
    },
}

fn load_policy() -> Result<(), CliError> {
    let Some(path) = std::env::var_os(POLICY_ENV) else {
        return Ok(());
    };
    let path = PathBuf::from(path);
    let text = std::fs::read_to_string(&path)
        .map_err(|e| CliError::Validation(format!("{POLICY_ENV}={}: {e}", path.display())))?;
    let policy = NumericPolicy::from_json(&text).map_err(|e| config::json_error(&path, &e))?;
    policy.install();
    Ok(())
}

fn init_threads(threads: Option<usize>) -> Result<(), CliError> {
    if let Some(t) = threads {
        if t == 0 {
            return Err(CliError::Validation("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| CliError::Io(e.to_string()))?;
    }
    Ok(())
}

fn finish(dir: &Path, command: &str, config: Value, files: &[PathBuf], started: Instant) -> Result<PathBuf, CliError> {
    let outputs = files.iter().map(|f| manifest::digest(f)).collect::<Result<Vec<_>, _>>()?;
    let m = RunManifest {
        tool: "brachx".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        command: command.into(),
        config,
        numeric_policy: NumericPolicy::current(),
        threads: rayon::current_num_threads(),
        wall_time_s: started.elapsed().as_secs_f64(),
        outputs,
    };
    manifest::write(dir, &m)
}

fn run(cli: Cli) -> Result<(), CliError> {
    let started = Instant::now();
    load_policy()?;
    init_threads(cli.threads)?;
    match cli.command {
        Command::Run {
            config_pos,
            config,
            kind,
            n,
            tol,
        } => {
            let o = Overrides {
                kind,
                n,
                seed: cli.seed,
                tol,
                out: cli.out,
            };
            let mut cfg = match config_pos.or(config) {
                Some(p) => ExperimentConfig::load(&p)?,
                None => ExperimentConfig::from_overrides(&o)?,
            };
            cfg.apply(&o);
            let kind = cfg.validate()?;
            let dir = cfg.output_dir();
            manifest::prepare_dir(&dir)?;
            let (files, summary) = experiments::run(kind, &cfg, &dir)?;
            let echo = serde_json::to_value(&cfg).map_err(|e| CliError::Io(e.to_string()))?;
            let m = finish(&dir, "run", echo, &files, started)?;
            print_summary(&summary, &m);
        }
        Command::Figure { figure, scale } => {
            let seed = cli.seed.unwrap_or(1);
            let fc = FigureConfig::new(figure, scale, seed)?;
            let dir = cli.out.unwrap_or_else(|| PathBuf::from(format!("fig{figure}")));
            manifest::prepare_dir(&dir)?;
            let report = run_figure(&fc, &dir)?;
            let echo = json!({ "figure": figure, "scale": scale, "seed": seed, "config": fc });
            let m = finish(&dir, "figure", echo, &report.files, started)?;
            print_summary(&json!({ "figure": figure, "stats": report.stats }), &m);
        }
    }
    Ok(())
}

fn print_summary(summary: &Value, manifest: &Path) {
    println!("{}", serde_json::to_string_pretty(summary).unwrap_or_default());
    eprintln!("wrote {}", manifest.display());
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("brachx: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
