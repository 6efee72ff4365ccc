use std::process::ExitCode;

use clap::Parser;
use tpabc_cli::{run, Cli};

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(text) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("tpabc: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
