mod args;
mod commands;

use std::process::ExitCode;

use clap::Parser;
use lednet_core::Error;

use args::{Cli, Command};
use commands::CheckFailed;

/// Exit status: 2 for usage and input errors, 3 for numeric failures and
/// failed checks.
fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<CheckFailed>().is_some() {
        return 3;
    }
    match err.downcast_ref::<Error>() {
        Some(Error::NonFiniteLoss { .. } | Error::NonFiniteGradient(_) | Error::Numeric(_)) => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Summarize(a) => commands::summarize(a),
        Command::Gradcheck(a) => commands::gradcheck(a),
        Command::GenData(a) => commands::gen_data(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Predict(a) => commands::predict(a),
        Command::Bench(a) => commands::bench(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
