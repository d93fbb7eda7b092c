//! Command-line driver. Every subcommand is deterministic given its inputs,
//! flags, and seed.

mod args;
mod commands;

pub use args::*;
pub use commands::*;

use clap::Parser;

/// Parses `std::env::args`, runs the subcommand and returns the exit code.
pub fn main() -> i32 {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("POT_LOG", "warn"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 3 } else { 0 };
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.name());
            e.exit_code()
        }
    }
}

pub fn run(cli: &Cli) -> crate::Result<()> {
    match &cli.command {
        Command::Prototypes(a) => cmd_prototypes(a),
        Command::Score(a) => cmd_score(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Synth(a) => cmd_synth(a),
    }
}
