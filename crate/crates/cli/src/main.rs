mod args;
mod commands;

use std::process::ExitCode;

use bof_core::ErrorKind;
use clap::Parser;

use args::{Cli, Command};

fn exit_code(kind: ErrorKind) -> u8 {
    match kind {
        ErrorKind::Usage => 1,
        ErrorKind::Data => 2,
        ErrorKind::Pipeline => 3,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return if usage {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let result = match &cli.command {
        Command::Extract(a) => commands::extract(a),
        Command::Fit(a) => commands::fit(a),
        Command::Distances(a) => commands::distances(a),
        Command::Evaluate(a) => commands::evaluate_cmd(a),
        Command::Run(a) => commands::run(a),
        Command::Compare(a) => commands::compare(a),
        Command::Audit(a) => commands::audit(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(e.kind()))
        }
    }
}
