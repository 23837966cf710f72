//! Benchmark driver: evaluation, convergence, parameter sweeps, connection
//! growth and the galaxy η study. Every command produces a JSON report.

pub mod args;
pub mod connectivity;
pub mod converge;
pub mod eval;
pub mod galaxy;
pub mod run;
pub mod sweep;

use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;

use args::{Cli, Command};

/// Writes `report` as JSON to `path` and prints `summary`, or prints the
/// JSON when there is no path.
pub fn emit<T: Serialize>(report: &T, summary: &str, path: Option<&Path>) -> Result<()> {
    let json = serde_json::to_string_pretty(report)?;
    match path {
        Some(p) => {
            std::fs::write(p, json + "\n").with_context(|| format!("writing {}", p.display()))?;
            print!("{summary}");
        }
        None => println!("{json}"),
    }
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Eval(a) => match eval::eval(&a)? {
            Some(r) => emit(&r, &r.summary(), a.report.as_deref()),
            None => Ok(()),
        },
        Command::Converge(a) => match converge::converge(&a)? {
            Some(r) => emit(&r, &r.summary(), a.report.as_deref()),
            None => Ok(()),
        },
        Command::Sweep(a) => match sweep::sweep(&a)? {
            Some(r) => emit(&r, &r.summary(), a.report.as_deref()),
            None => Ok(()),
        },
        Command::Connectivity(a) => {
            let r = connectivity::connectivity(&a)?;
            emit(&r, &r.summary(), a.report.as_deref())
        }
        Command::GalaxyEta(a) => {
            let r = galaxy::galaxy_eta(&a)?;
            emit(&r, &r.summary(), a.report.as_deref())
        }
    }
}
