use std::process::ExitCode;

use clap::Parser;
use spm_core::error::ErrorClass;

mod cli;

fn fail(code: u8, class: &str, msg: &str) -> ExitCode {
    let line = msg.split_whitespace().collect::<Vec<_>>().join(" ");
    eprintln!("E{code} {class}: {line}");
    ExitCode::from(code)
}

fn main() -> ExitCode {
    let parsed = match cli::Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("invalid arguments");
            return fail(2, "usage", first.trim_start_matches("error: "));
        }
    };
    if let Ok(v) = std::env::var("SPM_THREADS") {
        match v.parse::<usize>() {
            Ok(n) if n > 0 => {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
            _ => return fail(2, "usage", &format!("SPM_THREADS must be a positive integer, got `{v}`")),
        }
    }
    match cli::run(parsed) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => match e.class() {
            ErrorClass::Usage => fail(2, "usage", &e.to_string()),
            ErrorClass::Data => fail(3, "data", &e.to_string()),
            ErrorClass::Io => fail(4, "io", &e.to_string()),
        },
    }
}
