use std::io;
use std::process::ExitCode;

use clap::Parser;
use rhsim::cli::{run, Cli, Outcome};

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("RHSIM_LOG", "warn")).init();
    let cli = Cli::parse();
    let stdout = io::stdout();
    match run(&cli, &mut stdout.lock()) {
        Ok(outcome) => {
            if let Outcome::OracleViolation { mechanism, count, bound } = &outcome {
                eprintln!(
                    "rhsim: oracle violation under {mechanism}: {count} activations in one window (bound {bound})"
                );
            }
            ExitCode::from(outcome.exit_code())
        }
        Err(e) => {
            eprintln!("rhsim: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
