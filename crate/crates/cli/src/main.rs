use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    let cli = ietp_cli::Cli::parse();
    match ietp_cli::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code)
        }
    }
}
