//! `cc-geom`: command-line front end for the cc-geom library.
//!
//! Every run writes one report. JSON reports echo the inputs, the seed and
//! the tolerances, and end with a timestamp.

mod args;
mod commands;

use std::io::Write;
use std::process::ExitCode;

use clap::Parser;
use serde::Serialize;
use serde_json::Value;

use args::{Cli, OutFormat};

#[derive(Serialize)]
struct Report {
    command: String,
    version: &'static str,
    inputs: Value,
    seed: u64,
    tolerances: Value,
    result: Option<Value>,
    error: Option<String>,
    timestamp: String,
}

/// A failure before any computation ran.
pub struct UsageError(pub String);

impl<E: std::fmt::Display> From<E> for UsageError {
    fn from(e: E) -> Self {
        UsageError(e.to_string())
    }
}

/// What a subcommand produced: a JSON result, optional CSV rows, or a
/// computation error.
pub struct Outcome {
    pub result: Result<Value, String>,
    pub csv: Option<Vec<Vec<String>>>,
}

fn write_out(path: Option<&std::path::Path>, bytes: &[u8]) -> std::io::Result<()> {
    match path {
        Some(p) => std::fs::write(p, bytes),
        None => std::io::stdout().write_all(bytes),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    if let Some(n) = cli.common.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    let seed = cli.common.seed.unwrap_or_else(rand::random);
    let prepared = match commands::prepare(&cli, seed) {
        Ok(p) => p,
        Err(UsageError(msg)) => {
            eprintln!("error: {msg}");
            eprintln!("run `cc-geom {} --help` for the expected arguments", cli.command.name());
            return ExitCode::from(2);
        }
    };
    let outcome = commands::run(&prepared, seed);
    let failed = outcome.result.is_err();
    let bytes = match (cli.common.out, &outcome.csv, &outcome.result) {
        (OutFormat::Csv, Some(rows), Ok(_)) => {
            let mut w = csv::Writer::from_writer(Vec::new());
            for r in rows {
                if let Err(e) = w.write_record(r) {
                    eprintln!("error: {e}");
                    return ExitCode::from(1);
                }
            }
            match w.into_inner() {
                Ok(b) => b,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(1);
                }
            }
        }
        (OutFormat::Csv, None, _) => {
            eprintln!("error: `{}` has no tabular output; use --out json", cli.command.name());
            return ExitCode::from(2);
        }
        _ => {
            let (result, error) = match outcome.result {
                Ok(v) => (Some(v), None),
                Err(e) => (None, Some(e)),
            };
            let report = Report {
                command: cli.command.name().to_string(),
                version: env!("CARGO_PKG_VERSION"),
                inputs: prepared.inputs.clone(),
                seed,
                tolerances: prepared.tolerances.clone(),
                result,
                error,
                timestamp: chrono::Utc::now().to_rfc3339(),
            };
            let mut b = serde_json::to_vec_pretty(&report).expect("report serializes");
            b.push(b'\n');
            b
        }
    };
    if let Err(e) = write_out(cli.common.output.as_deref(), &bytes) {
        eprintln!("error: cannot write report: {e}");
        return ExitCode::from(1);
    }
    if failed {
        ExitCode::from(1)
    } else {
        ExitCode::SUCCESS
    }
}
