use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    let cli = cim::Cli::parse();
    match cim::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(cim::exit_code(&e) as u8)
        }
    }
}
