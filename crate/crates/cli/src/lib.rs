//! Command-line front end: dataset generation, surrogate training, single
//! and streaming inference, benchmarks, and slack scans.
//!
//! Exit codes: 0 success, 2 usage, 3 I/O, 4 parse, 5 numerical failure,
//! 1 anything else.

pub mod args;
pub mod commands;
pub mod error;
pub mod report;
pub mod settings;

pub use args::{Cli, Command};
pub use error::CliError;

use settings::Settings;

/// Runs a parsed command line and returns the text for standard output.
pub fn run(cli: &Cli) -> Result<String, CliError> {
    let mut s = Settings::load(cli.config.as_deref())?;
    match &cli.command {
        Command::GenData(a) => commands::gen_data(&mut s, a),
        Command::Train(a) => commands::train(&mut s, a),
        Command::Infer(a) => commands::infer(&mut s, a),
        Command::Bench(a) => commands::bench(&mut s, a),
        Command::SlackScan(a) => commands::slack_scan(&mut s, a),
    }
}
