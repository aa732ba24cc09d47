//! Command-line front end for the `archft` binary.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::error::{Error, Result};
use crate::pipeline::{Phase, Run, RunConfig};

/// Environment variable overriding the default run root (`runs`).
pub const RUN_ROOT_ENV: &str = "ARCHFT_RUN_ROOT";

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_PHASE: i32 = 3;

#[derive(Parser, Debug)]
#[command(name = "archft", version, about = "Two-stage architectural fine-tuning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the synthetic source and target datasets.
    GenData(Common),
    /// Train the base network on the source task.
    Pretrain(Common),
    /// Run the architecture search.
    Search(Common),
    /// Fine-tune the searched network on the target task.
    Finetune(Common),
    /// Fine-tune the unmodified base network on the target task.
    Baseline(Common),
    /// Run every phase that has not completed yet.
    RunAll(Common),
    /// Rebuild report.txt and finetune.csv from the logs.
    Report(Common),
}

#[derive(Args, Debug)]
struct Common {
    /// Config file of `key = value` lines.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Root under which the run directory is created.
    #[arg(long)]
    runs: Option<PathBuf>,
    /// Use this run directory instead of one derived from the config.
    /// Without --config, the directory's config.resolved is used.
    #[arg(long)]
    run_dir: Option<PathBuf>,
    /// Shorthand for the `seed=` override.
    #[arg(long)]
    seed: Option<u64>,
    /// `key=value` overrides applied after the config file.
    overrides: Vec<String>,
}

/// Reads a config file on top of the defaults.
pub fn parse_config(path: &Path) -> Result<RunConfig> {
    RunConfig::load(path)
}

fn resolve(common: &Common) -> Result<(RunConfig, PathBuf)> {
    let mut cfg = match (&common.config, &common.run_dir) {
        (Some(path), _) => parse_config(path)?,
        (None, Some(dir)) if dir.join("config.resolved").is_file() => parse_config(&dir.join("config.resolved"))?,
        _ => RunConfig::default(),
    };
    cfg.apply_overrides(&common.overrides)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    let dir = match &common.run_dir {
        Some(d) => d.clone(),
        None => {
            let root = common
                .runs
                .clone()
                .or_else(|| std::env::var_os(RUN_ROOT_ENV).map(PathBuf::from))
                .unwrap_or_else(|| PathBuf::from("runs"));
            root.join(cfg.run_name())
        }
    };
    Ok((cfg, dir))
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config { .. } | Error::Parse { .. } => EXIT_CONFIG,
        _ => EXIT_PHASE,
    }
}

fn execute(command: Command, out: &mut dyn Write) -> Result<()> {
    let (common, phase) = match command {
        Command::GenData(c) => (c, Some(Phase::GenData)),
        Command::Pretrain(c) => (c, Some(Phase::Pretrain)),
        Command::Search(c) => (c, Some(Phase::Search)),
        Command::Finetune(c) => (c, Some(Phase::Finetune)),
        Command::Baseline(c) => (c, Some(Phase::Baseline)),
        Command::Report(c) => (c, Some(Phase::Report)),
        Command::RunAll(c) => (c, None),
    };
    let (cfg, dir) = resolve(&common)?;
    let run = Run::new(cfg, &dir);
    match phase {
        Some(p) => {
            run.prepare()?;
            run.run_phase(p)?;
            let _ = writeln!(out, "{}: done in {}", p.name(), dir.display());
        }
        None => {
            let ran = run.run_all()?;
            for p in Phase::ALL {
                let state = if ran.contains(&p) { "ran" } else { "skipped" };
                let _ = writeln!(out, "{:<9} {state}", p.name());
            }
            let _ = writeln!(out, "run directory: {}", dir.display());
        }
    }
    if phase.is_none() || phase == Some(Phase::Report) {
        let path = dir.join("report.txt");
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let _ = write!(out, "{text}");
    }
    Ok(())
}

/// Runs the CLI on `args` (program name first) and returns the exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            if code == EXIT_OK {
                let _ = write!(out, "{e}");
            } else {
                let _ = write!(err, "{e}");
            }
            return code;
        }
    };
    match execute(cli.command, out) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let code = exit_code(&e);
            let kind = if code == EXIT_CONFIG { "config error" } else { "error" };
            let _ = writeln!(err, "{kind}: {e}");
            code
        }
    }
}
