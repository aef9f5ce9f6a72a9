mod args;
mod commands;
mod config;
mod error;

use std::ffi::OsString;
use std::process::ExitCode;

use clap::Parser;

use args::Cli;
use error::{CliError, Kind};

fn parse(argv: Vec<OsString>) -> Result<Cli, CliError> {
    let cli = Cli::try_parse_from(&argv).unwrap_or_else(|e| e.exit());
    let Some(path) = cli.config.clone() else {
        return Ok(cli);
    };
    let name = cli.command.name();
    let extra = config::config_args(&path, name)?;
    let spliced = config::splice(&argv, name, extra);
    Cli::try_parse_from(spliced).map_err(|e| {
        let text = e.to_string();
        CliError::config(format!(
            "config {}: {}",
            path.display(),
            text.lines().next().unwrap_or_default()
        ))
    })
}

fn run() -> Result<(), CliError> {
    let cli = parse(std::env::args_os().collect())?;
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::config("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError {
                kind: Kind::Config,
                message: e.to_string(),
            })?;
    }
    commands::run(&cli.command, cli.seed)
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.kind.exit_code() as u8)
        }
    }
}
