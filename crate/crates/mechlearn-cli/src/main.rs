mod args;
mod commands;
mod generate;
mod report;
mod verify;

use std::process::ExitCode;

use clap::Parser;

use args::Cli;
use report::Config;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    let config = Config {
        global: cli.global,
        command: cli.command,
    };
    match report::execute(&config) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
