//! Command-line front end: `run`, `report`, `list`.
//!
//! Exit codes: 0 every check passed, 1 a check failed, 2 usage error
//! (bad arguments, unknown experiment, invalid override), 3 runtime error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::error::Error;
use crate::experiments::{self, ExperimentSpec};

#[derive(Debug, Parser)]
#[command(name = "taskmpc", version, about = "Task-space MPC experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one registered experiment and write its artifacts.
    Run {
        name: String,
        /// Override a declared parameter, `key=value` (lists comma separated).
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        #[arg(long, default_value = "runs")]
        out: PathBuf,
        /// Also write SVG plots.
        #[arg(long)]
        plots: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Summarise every metrics.json below a directory.
    Report { dir: PathBuf },
    /// List registered experiments.
    List,
}

pub const EXIT_CHECK_FAILED: u8 = 1;
pub const EXIT_USAGE: u8 = 2;
pub const EXIT_RUNTIME: u8 = 3;

fn error_code(e: &Error) -> u8 {
    match e {
        Error::UnknownExperiment(_) | Error::InvalidOverride { .. } => EXIT_USAGE,
        _ => EXIT_RUNTIME,
    }
}

/// Parses `args` (program name first) and executes the command.
pub fn main_with<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_USAGE) } else { ExitCode::SUCCESS };
        }
    };
    match execute(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(error_code(&e))
        }
    }
}

fn execute(cmd: Command) -> crate::Result<u8> {
    match cmd {
        Command::List => {
            for n in experiments::NAMES {
                println!("{n:<18} {}", experiments::describe(n).unwrap_or_default());
            }
            Ok(0)
        }
        Command::Report { dir } => {
            print!("{}", experiments::report(&dir)?);
            Ok(0)
        }
        Command::Run {
            name,
            set,
            out,
            plots,
            seed,
        } => {
            let mut spec = ExperimentSpec::new(name, out);
            spec.plots = plots;
            spec.seed = seed;
            for kv in set {
                let (k, v) = kv.split_once('=').ok_or_else(|| Error::InvalidOverride {
                    key: kv.clone(),
                    reason: "expected key=value".into(),
                })?;
                spec.overrides.push((k.trim().into(), v.trim().into()));
            }
            let rep = experiments::run(&spec)?;
            for c in &rep.checks {
                println!("[{}] {}: {}", if c.pass { "PASS" } else { "FAIL" }, c.name, c.detail);
            }
            println!(
                "{} {} -> {}",
                rep.experiment,
                if rep.pass { "PASS" } else { "FAIL" },
                spec.output_dir.join(&spec.name).display()
            );
            Ok(if rep.pass { 0 } else { EXIT_CHECK_FAILED })
        }
    }
}
