//! `cohf`: batch entry points for data generation, splitting, training,
//! evaluation, ablation, gradient self-checks and the baseline.

mod commands;
mod config;
mod manifest;
mod report;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use rayon::prelude::*;
use thiserror::Error;

use commands::Cmd;
use config::RunConfig;
use manifest::{commit_id, hash_input, verify_inputs, Manifest};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numerical failure: {0}")]
    Numeric(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }
}

impl From<cohf::Error> for CliError {
    fn from(e: cohf::Error) -> Self {
        use cohf::Error as E;
        let msg = e.to_string();
        match e {
            E::Config(m) => CliError::Config(m),
            E::Numeric(_) | E::NonFiniteLoss { .. } => CliError::Numeric(msg),
            E::Graph(_) | E::Episode(_) | E::Io(_) | E::Json(_) => CliError::Data(msg),
        }
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "cohf",
    version,
    about = "Causal OOD few-shot node classification on heterogeneous graphs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Debug)]
struct RunArgs {
    /// Flat key = value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Overrides the configured seed.
    #[arg(long, conflicts_with = "seeds")]
    seed: Option<u64>,
    /// Comma-separated seeds; one run per seed under `seed_<n>/`.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic graph from the causal generator.
    GenScm(RunArgs),
    /// Split a graph (or two environments) into source, support and query.
    Split(RunArgs),
    /// Meta-train the model and save a checkpoint.
    Train(RunArgs),
    /// Meta-test a checkpoint.
    Eval(RunArgs),
    /// Train and test the full model and its variants.
    Ablate(RunArgs),
    /// Finite-difference gradient self-check.
    Gradcheck(RunArgs),
    /// Train and test the GCN prototypical baseline.
    Baseline(RunArgs),
    /// Aggregate metrics files into a table.
    Report {
        #[arg(required = true)]
        files: Vec<PathBuf>,
        /// Also write `report.txt` and a manifest here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Rerun the command recorded in a manifest.
    Replay {
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// List the configuration keys of a command with their defaults.
    Keys { command: String },
}

fn run_command(cmd: Cmd, cfg: &RunConfig, seeds: &[u64], multi: bool, out: &Path) -> Result<Manifest, CliError> {
    let start = Instant::now();
    cmd.check(cfg)?;
    let mut inputs = BTreeMap::new();
    for key in cmd.input_keys() {
        if let Some(p) = cfg.optional_path(key) {
            hash_input(&p, &mut inputs)?;
        }
    }
    let runs: Vec<Result<Vec<PathBuf>, CliError>> = seeds
        .par_iter()
        .map(|&s| {
            let mut c = cfg.clone();
            c.set_u64("seed", s);
            let dir = if multi {
                out.join(format!("seed_{s}"))
            } else {
                out.to_path_buf()
            };
            let files = cmd.run(&c, s, &dir)?;
            Ok(files
                .into_iter()
                .map(|f| {
                    if multi {
                        PathBuf::from(format!("seed_{s}")).join(f)
                    } else {
                        f
                    }
                })
                .collect())
        })
        .collect();
    let mut outputs = Vec::new();
    for r in runs {
        outputs.extend(r?.into_iter().map(|p| p.display().to_string()));
    }
    let manifest = Manifest {
        command: cmd.name().into(),
        config: cfg.echo(),
        seeds: seeds.to_vec(),
        commit: commit_id(),
        wall_time_secs: start.elapsed().as_secs_f64(),
        rng: cohf::RNG_ALGORITHM.into(),
        inputs,
        outputs,
    };
    manifest.save(out)?;
    Ok(manifest)
}

fn run_report(files: &[PathBuf], out: Option<&Path>) -> Result<(), CliError> {
    let start = Instant::now();
    let rows = report::summarize(files)?;
    let table = report::render(&rows);
    print!("{table}");
    if let Some(out) = out {
        std::fs::create_dir_all(out).map_err(|e| CliError::Data(format!("{}: {e}", out.display())))?;
        std::fs::write(out.join("report.txt"), &table).map_err(|e| CliError::Data(e.to_string()))?;
        let mut inputs = BTreeMap::new();
        for f in files {
            hash_input(f, &mut inputs)?;
        }
        Manifest {
            command: "report".into(),
            config: BTreeMap::new(),
            seeds: Vec::new(),
            commit: commit_id(),
            wall_time_secs: start.elapsed().as_secs_f64(),
            rng: cohf::RNG_ALGORITHM.into(),
            inputs,
            outputs: vec!["report.txt".into()],
        }
        .save(out)?;
    }
    Ok(())
}

fn replay(path: &Path, out: &Path) -> Result<(), CliError> {
    let m = Manifest::load(path)?;
    verify_inputs(&m.inputs)?;
    if m.command == "report" {
        let files: Vec<PathBuf> = m.inputs.keys().map(PathBuf::from).collect();
        return run_report(&files, Some(out));
    }
    let cmd = Cmd::from_name(&m.command)
        .ok_or_else(|| CliError::Data(format!("unknown command `{}` in manifest", m.command)))?;
    let cfg = RunConfig::from_echo(&m.config, &cmd.schema(), cmd.name())?;
    let multi = m.outputs.iter().any(|o| o.starts_with("seed_"));
    run_command(cmd, &cfg, &m.seeds, multi, out)?;
    Ok(())
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    let (cmd, args) = match cli.command {
        Command::GenScm(a) => (Cmd::GenScm, a),
        Command::Split(a) => (Cmd::Split, a),
        Command::Train(a) => (Cmd::Train, a),
        Command::Eval(a) => (Cmd::Eval, a),
        Command::Ablate(a) => (Cmd::Ablate, a),
        Command::Gradcheck(a) => (Cmd::Gradcheck, a),
        Command::Baseline(a) => (Cmd::Baseline, a),
        Command::Report { files, out } => return run_report(&files, out.as_deref()),
        Command::Replay { manifest, out } => return replay(&manifest, &out),
        Command::Keys { command } => {
            let cmd =
                Cmd::from_name(&command).ok_or_else(|| CliError::Config(format!("unknown command `{command}`")))?;
            let defaults = RunConfig::parse("", &cmd.schema(), cmd.name())?.echo();
            for (k, v) in defaults {
                println!("{k} = {v}");
            }
            return Ok(());
        }
    };
    let mut cfg = RunConfig::load(args.config.as_deref(), &cmd.schema(), cmd.name())?;
    if let Some(s) = args.seed {
        cfg.set_u64("seed", s);
    }
    let (seeds, multi) = match args.seeds {
        Some(list) if !list.is_empty() => (list, true),
        _ => (vec![cfg.u64("seed")], false),
    };
    run_command(cmd, &cfg, &seeds, multi, &args.out)?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
