//! `weakkam` command-line front end.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod config;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::RunConfig;
use run::Command;

#[derive(Parser, Debug)]
#[command(name = "weakkam", version, about = "Semi-discrete weak KAM solver on the flat torus")]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(clap::Args, Debug)]
struct Common {
    /// Run configuration (TOML, or JSON with a .json extension).
    #[arg(long)]
    config: PathBuf,
    /// Output root; overrides `output` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed for randomized sampling; overrides `seed` in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Sub {
    /// Ergodic constant, weak KAM solution and calibration sample.
    Solve(Common),
    /// Optimal edge measure and discrete Mather set.
    Mather(Common),
    /// Discrete Aubry set with a bi-infinite witness.
    Aubry(Common),
    /// Discrete Euler–Lagrange orbits and pseudo-orbit defects.
    Flow(Common),
    /// Penalized Mather measure selection.
    Select(Common),
    /// τ-sweep with Kuratowski trend report.
    Sweep(Common),
}

const EXIT_USAGE: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_SOLVER: u8 = 3;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let (cmd, common) = match cli.command {
        Sub::Solve(c) => (Command::Solve, c),
        Sub::Mather(c) => (Command::Mather, c),
        Sub::Aubry(c) => (Command::Aubry, c),
        Sub::Flow(c) => (Command::Flow, c),
        Sub::Select(c) => (Command::Select, c),
        Sub::Sweep(c) => (Command::Sweep, c),
    };
    if let Some(t) = common.threads {
        if t == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(EXIT_USAGE);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t).build_global() {
            eprintln!("error: cannot configure thread pool: {e}");
            return ExitCode::from(EXIT_USAGE);
        }
    }
    let mut cfg = match RunConfig::load(&common.config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    if let Some(out) = common.out {
        cfg.output = out;
    }
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    match run::run(cmd, &cfg) {
        Ok(dir) => {
            println!("{}", dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { EXIT_CONFIG } else { EXIT_SOLVER })
        }
    }
}
