//! `tscc`: generate data, cluster it, inspect the embedding, estimate
//! incidence constants, and rerun the fixed-seed reference scenarios.
//!
//! Exit codes: 0 success, 1 usage, 2 validation, 3 numerical failure, 4 I/O.

mod args;
mod commands;
mod error;
mod output;
mod reproduce;

use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match &cli.command {
        Command::Generate(a) => commands::generate(&cli.out_dir, a),
        Command::Cluster(a) => commands::cluster(&cli.out_dir, a),
        Command::Diagnose(a) => commands::diagnose(&cli.out_dir, a),
        Command::Incidence(a) => commands::incidence(&cli.out_dir, a),
        Command::Reproduce(a) => reproduce::run(&cli.out_dir, a),
    };
    match result {
        Ok(written) => {
            for path in written {
                println!("{}", path.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("tscc: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
