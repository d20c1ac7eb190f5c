mod cli;
mod commands;
mod config;
mod manifest;

use std::process::ExitCode;

use clap::Parser;
use regimerl::{ErrorKind, Result};

use cli::{Cli, Command};

fn dispatch(cmd: &Command) -> Result<()> {
    match cmd {
        Command::Synth(a) => commands::synth(a),
        Command::Detect(a) => commands::detect(a),
        Command::Simulate(a) => commands::simulate(a),
        Command::Train(a) => commands::train(a),
        Command::Backtest(a) => commands::backtest_cmd(a),
        Command::Ablate(a) => commands::ablate(a),
        Command::Stats(a) => commands::stats(a),
        Command::Pipeline(a) => commands::pipeline(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.threads {
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(|| dispatch(&cli.command)),
            Err(e) => {
                eprintln!("error: could not start thread pool: {e}");
                return ExitCode::from(2);
            }
        },
        None => dispatch(&cli.command),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e.kind() {
                ErrorKind::Numerical => ExitCode::from(3),
                _ => ExitCode::from(2),
            }
        }
    }
}
