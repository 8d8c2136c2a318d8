use std::process::ExitCode;

use clap::Parser;
use prosody_emph_cli::{run, Cli};

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli.command) {
        Ok(outcome) => {
            for f in &outcome.failures {
                eprintln!("{}: {}", f.id, f.error);
            }
            if outcome.success() {
                ExitCode::SUCCESS
            } else {
                eprintln!("{} utterance(s) failed", outcome.failures.len());
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
