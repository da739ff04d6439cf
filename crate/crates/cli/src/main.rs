use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    let cli = gridarena_cli::Cli::parse();
    match gridarena_cli::execute(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(gridarena_cli::EXIT_INPUT)
        }
    }
}
