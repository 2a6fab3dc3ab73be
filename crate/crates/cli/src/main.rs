//! `hte`: batch front end for the treatment-effect toolkit.
//!
//! Every subcommand reads a TOML config, writes its outputs into the output
//! directory and prints a one-line summary. Exit status is 0 on success, 1
//! for invalid input or usage, 2 for internal failures.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::commands::Ctx;
use crate::config::Loaded;

#[derive(Debug)]
pub enum CliError {
    User(String),
    Internal(String),
}

impl From<hte_core::Error> for CliError {
    fn from(e: hte_core::Error) -> Self {
        if e.is_user_error() {
            CliError::User(e.to_string())
        } else {
            CliError::Internal(e.to_string())
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Internal(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Internal(e.to_string())
    }
}

#[derive(Parser)]
#[command(name = "hte", version, about = "Heterogeneous treatment effect estimation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Override the master seed from the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; all available cores by default.
    #[arg(long)]
    threads: Option<usize>,
    /// Override the output directory from the config.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the estimator suite and nuisance models and summarize the fits.
    Fit {
        #[command(flatten)]
        common: Common,
        /// Also write the encoded feature matrix.
        #[arg(long)]
        export_encoded: bool,
    },
    /// Average treatment effects (IPW, REG, AIPW, MATCH).
    Ate {
        #[command(flatten)]
        common: Common,
        /// Add the signed-rank sensitivity analysis of the matched pairs.
        #[arg(long)]
        sensitivity: bool,
    },
    /// Per-unit estimate matrix, agreement report and envelope decisions.
    Stability {
        #[command(flatten)]
        common: Common,
    },
    /// Exploration/validation workflow for declared subgroup hypotheses.
    Subgroup {
        #[command(flatten)]
        common: Common,
    },
    /// Partial dependence and marginal CATE curves on the exploration half.
    Pdp {
        #[command(flatten)]
        common: Common,
    },
    /// Generate a synthetic dataset and its true effects.
    Simulate {
        #[command(flatten)]
        common: Common,
    },
}

fn run(cmd: Command) -> Result<String, CliError> {
    let common = match &cmd {
        Command::Fit { common, .. }
        | Command::Ate { common, .. }
        | Command::Stability { common }
        | Command::Subgroup { common }
        | Command::Pdp { common }
        | Command::Simulate { common } => common,
    };
    if let Some(t) = common.threads {
        if t == 0 {
            return Err(CliError::User("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| CliError::Internal(format!("thread pool: {e}")))?;
    }
    let cfg = Loaded::read(&common.config, common.seed)?;
    let out = commands::output_dir(&cfg, common.output.as_deref());
    let ctx = Ctx { cfg, out };
    match cmd {
        Command::Fit { export_encoded, .. } => commands::fit(&ctx, export_encoded),
        Command::Ate { sensitivity, .. } => commands::ate(&ctx, sensitivity),
        Command::Stability { .. } => commands::stability(&ctx),
        Command::Subgroup { .. } => commands::subgroup(&ctx),
        Command::Pdp { .. } => commands::pdp(&ctx),
        Command::Simulate { .. } => commands::simulate(&ctx),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(line) => {
            println!("{line}");
            ExitCode::SUCCESS
        }
        Err(CliError::User(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(CliError::Internal(m)) => {
            eprintln!("internal error: {m}");
            ExitCode::from(2)
        }
    }
}
