use std::process::ExitCode;

use clap::Parser;
use danube_cli::Cli;

fn main() -> ExitCode {
    // clap exits with 0 for --help and 2 for usage errors on its own
    let cli = Cli::parse();
    match danube_cli::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
