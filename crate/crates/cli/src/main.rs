use std::io::Write;
use std::process::ExitCode;

use clap::Parser;

mod args;
mod commands;
mod config;
mod exit;

fn main() -> ExitCode {
    let cli = args::Cli::parse();
    let mut stdout = std::io::stdout().lock();
    match commands::run(cli, &mut stdout) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let _ = stdout.flush();
            eprintln!("{}", err.line());
            ExitCode::from(err.code())
        }
    }
}
