use std::process::ExitCode;

use clap::Parser;
use evsi::cli::{run, CliArgs};

fn main() -> ExitCode {
    let args = CliArgs::parse();
    match run(&args) {
        Ok(paths) => {
            for p in paths {
                println!("{}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
