//! Command-line driver: sampling, rendering, solvers and checks, with
//! reproducible JSON, CSV and SVG outputs.

pub mod args;
pub mod commands;
pub mod error;
pub mod svg;

use std::ffi::OsString;

use clap::Parser;

pub use args::Cli;
pub use error::{exit, CliError, CliResult};

/// Parses `argv` and runs the command, returning the process exit code.
/// Help and version requests exit with 0, other parse errors with 1.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() {
                exit::USAGE
            } else {
                exit::OK
            };
            let _ = e.print();
            return code;
        }
    };
    match commands::dispatch(&cli.common, &cli.command) {
        Ok(()) => exit::OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
