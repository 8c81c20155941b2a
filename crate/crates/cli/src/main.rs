use std::process::ExitCode;

use alphavb_cli::{run, Cli};
use clap::Parser;

const THREADS_VAR: &str = "ALPHAVB_THREADS";

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Ok(v) = std::env::var(THREADS_VAR) {
        match v.parse::<usize>() {
            Ok(n) if n > 0 => {
                // Fails only if a pool already exists, which cannot happen here.
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
            _ => {
                eprintln!("alphavb: bad config: {THREADS_VAR} must be a positive integer, got {v:?}");
                return ExitCode::from(2);
            }
        }
    }
    match run(&cli) {
        Ok(outcome) => {
            for msg in &outcome.flagged {
                eprintln!("alphavb: warning: {msg}");
            }
            if cli.strict && !outcome.flagged.is_empty() {
                eprintln!("alphavb: strict mode: {} flagged result(s)", outcome.flagged.len());
                return ExitCode::from(1);
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("alphavb: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
