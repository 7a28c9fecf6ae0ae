use std::process::ExitCode;

use anyhow::Context;
use clap::Parser;
use online_conformal::cli::{execute, Cli};

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut stdout = std::io::stdout().lock();
    match execute(cli.command, &mut stdout).context("oconf failed") {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("oconf: some acceptance checks failed");
            ExitCode::from(2)
        }
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}
