use std::process::ExitCode;

use clap::Parser;
use strata_cli::cli::{exit_code, run, Cli};

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if matches!(cli.command, strata_cli::cli::Command::Serve { .. }) { tracing::Level::INFO } else { tracing::Level::WARN };
    tracing_subscriber::fmt().with_writer(std::io::stderr).with_max_level(level).init();
    let mut stdout = std::io::stdout().lock();
    match run(&cli, std::env::vars(), &mut stdout) {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
