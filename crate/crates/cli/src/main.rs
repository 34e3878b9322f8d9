use std::process::ExitCode;

use clap::Parser;
use ncsn_cli::{run, tune_allocator, Cli, CliError};

fn main() -> ExitCode {
    // Help and version requests exit through clap; usage errors fall through
    // to the one-line error format.
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            let msg = e.to_string();
            return fail(&CliError::config(
                msg.lines().next().unwrap_or("invalid arguments"),
            ));
        }
    };
    tune_allocator();
    match run(&cli) {
        Ok(report) => {
            for (k, v) in report {
                println!("{k}={v}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => fail(&e),
    }
}

fn fail(e: &CliError) -> ExitCode {
    eprintln!("{}", e.one_line());
    ExitCode::from(e.exit_code() as u8)
}
