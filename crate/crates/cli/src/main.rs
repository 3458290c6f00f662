//! `mixnl`: solve and verify the mixed local-nonlocal eigenproblem.
//!
//! Exit status: 0 success, 1 a verification check failed, 2 bad
//! configuration, 3 solver or quadrature failure.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mixnl::verify::{Fault, REGISTRY};
use thiserror::Error;

use crate::commands::Outcome;
use crate::config::{parse_h_list, parse_toggle, parse_tol, RunConfig};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("solver error: {0}")]
    Solver(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Solver(_) => 3,
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "mixnl",
    version,
    about = "Galerkin eigensolver for -u'' + (-Δ)^s u with mixed exterior conditions"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Assemble and solve; write eigenvalues.csv, eigenvectors.csv, run_meta.json.
    Solve {
        #[command(flatten)]
        common: Common,
        /// Also write A.mtx and B.mtx (MatrixMarket).
        #[arg(long)]
        dump_matrices: bool,
    },
    /// Run both solvers and the full check registry; write report.json, report.txt.
    Verify {
        #[command(flatten)]
        common: Common,
        /// Corrupt the input of the named check (test hook).
        #[arg(long, value_name = "NAME")]
        inject_fault: Option<String>,
    },
    /// Eigenvalues over a sequence of mesh sizes; write convergence.csv.
    Converge {
        #[command(flatten)]
        common: Common,
        /// Comma-separated, strictly decreasing mesh sizes (fractions like 1/64 allowed).
        #[arg(long, value_name = "H,H,H")]
        h_list: Option<String>,
    },
    /// Integration-by-parts identity on built-in test pairs; write ibp.json.
    Ibp {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "NAME")]
        inject_fault: Option<String>,
    },
}

#[derive(Debug, Args)]
struct Common {
    /// JSON or TOML run configuration.
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Output directory (overrides output_dir; default ./out)
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Number of eigenpairs (overrides k)
    #[arg(long, value_name = "N")]
    k: Option<usize>,
    /// Target mesh size (overrides target_h)
    #[arg(long, value_name = "H")]
    h: Option<f64>,
    /// local-only, nonlocal-only or both.
    #[arg(long, value_name = "WHICH")]
    toggle: Option<String>,
    /// Override a verification tolerance; repeatable.
    #[arg(long = "tol", value_name = "NAME=VALUE")]
    tols: Vec<String>,
}

impl Common {
    fn load(&self) -> Result<RunConfig, CliError> {
        let mut cfg = RunConfig::load(&self.config)?;
        if let Some(dir) = &self.out {
            cfg.output_dir = Some(dir.clone());
        }
        if let Some(k) = self.k {
            cfg.k = k;
        }
        if let Some(h) = self.h {
            cfg.target_h = h;
        }
        if let Some(t) = &self.toggle {
            cfg.toggles = parse_toggle(t)?;
        }
        for t in &self.tols {
            let (name, value) = parse_tol(t)?;
            cfg.tolerances.set(&name, value).map_err(CliError::Config)?;
        }
        Ok(cfg)
    }
}

fn parse_fault(name: Option<&str>) -> Result<Option<Fault>, CliError> {
    name.map(|n| {
        Fault::from_name(n).ok_or_else(|| {
            CliError::Config(format!(
                "--inject-fault {n}: expected one of {}",
                REGISTRY.join(", ")
            ))
        })
    })
    .transpose()
}

fn run(cli: Cli) -> Result<Outcome, CliError> {
    match cli.command {
        Command::Solve {
            common,
            dump_matrices,
        } => commands::cmd_solve(&common.load()?, dump_matrices),
        Command::Verify {
            common,
            inject_fault,
        } => {
            let fault = parse_fault(inject_fault.as_deref())?;
            commands::cmd_verify(&common.load()?, fault)
        }
        Command::Converge { common, h_list } => {
            let cfg = common.load()?;
            let hs = match h_list {
                Some(s) => parse_h_list(&s)?,
                None => cfg.h_list.clone().ok_or_else(|| {
                    CliError::Config("converge needs --h-list or h_list in the config".into())
                })?,
            };
            commands::cmd_converge(&cfg, &hs)
        }
        Command::Ibp {
            common,
            inject_fault,
        } => {
            let fault = parse_fault(inject_fault.as_deref())?;
            commands::cmd_ibp(&common.load()?, fault)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(Outcome::Pass) => ExitCode::SUCCESS,
        Ok(Outcome::ChecksFailed) => ExitCode::from(1),
        Err(e) => {
            eprintln!("mixnl: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
