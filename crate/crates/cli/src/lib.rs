//! Command-line front end: experiment configuration, seeded parallel runs and
//! CSV/JSON artifacts.

use std::ffi::OsString;
use std::path::PathBuf;
use std::time::Instant;

use clap::Parser;

pub mod args;
pub mod experiments;
pub mod output;
pub mod potential;

pub use args::{Cli, Command, WORKERS_ENV};
pub use experiments::run_command;
pub use output::{Check, Outcome, Table};
pub use potential::{parse_potential, PotentialSpec};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VIOLATION: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Core(#[from] uld_core::Error),

    #[error("cannot write `{}`: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

/// Parse arguments, run the experiment, write artifacts and return the
/// process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    let start = Instant::now();
    let (outcome, dir) = match run_command(cli.command) {
        Ok(x) => x,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_CONFIG;
        }
    };
    let runtime = start.elapsed().as_secs_f64();
    match outcome.write(&dir, runtime) {
        Ok(paths) => {
            for c in &outcome.checks {
                println!("{} {}: {}", if c.pass { "PASS" } else { "FAIL" }, c.name, c.detail);
            }
            for p in paths {
                println!("wrote {}", p.display());
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_CONFIG;
        }
    }
    if outcome.passed() {
        EXIT_OK
    } else {
        EXIT_VIOLATION
    }
}
