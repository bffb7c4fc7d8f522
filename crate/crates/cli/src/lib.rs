pub mod args;
pub mod commands;
pub mod error;
pub mod manifest;

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use serde_json::Value;

pub use args::{Cli, Command};
pub use error::{CliError, Result};
use manifest::{write_json, RunManifest};

pub const EXIT_OK: u8 = 0;
pub const EXIT_VERDICT: u8 = 1;
pub const EXIT_USAGE: u8 = 2;

/// What a command produced: a JSON report, a short human summary and a
/// pass/fail verdict.
pub struct Outcome {
    pub pass: bool,
    pub report: Value,
    pub summary: String,
    pub config: Value,
    pub outputs: Vec<PathBuf>,
}

impl Outcome {
    pub fn new(pass: bool, report: impl Serialize, summary: String) -> Result<Self> {
        Ok(Outcome {
            pass,
            report: serde_json::to_value(report).map_err(|e| CliError::usage(e.to_string()))?,
            summary,
            config: Value::Null,
            outputs: Vec::new(),
        })
    }
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Lint => "lint",
        Command::Analyze(_) => "analyze",
        Command::Train(_) => "train",
        Command::Sr(_) => "sr",
        Command::Bench(_) => "bench",
    }
}

pub fn run(cli: &Cli) -> Result<u8> {
    let start = Instant::now();
    std::fs::create_dir_all(&cli.out).map_err(|e| CliError::io(&cli.out, e))?;
    let name = command_name(&cli.command);
    let mut outcome = match &cli.command {
        Command::Lint => commands::lint::run(cli)?,
        Command::Analyze(a) => commands::analyze::run(cli, a)?,
        Command::Train(a) => commands::train::run(cli, a)?,
        Command::Sr(a) => commands::sr::run(cli, a)?,
        Command::Bench(a) => commands::bench::run(cli, a)?,
    };
    let report_path = cli.out.join(format!("{name}.json"));
    write_json(&report_path, &outcome.report)?;
    outcome.outputs.insert(0, report_path);

    let mut manifest = RunManifest::new(name, std::mem::take(&mut outcome.config), cli.seed);
    manifest.outputs = outcome.outputs;
    manifest.timings.total_seconds = start.elapsed().as_secs_f64();
    manifest.write(&cli.out)?;

    if cli.json {
        println!("{}", serde_json::to_string_pretty(&outcome.report).expect("report serialises"));
    } else {
        println!("{}", outcome.summary);
    }
    Ok(if outcome.pass { EXIT_OK } else { EXIT_VERDICT })
}

pub(crate) fn require<'a>(p: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
    p.as_deref().ok_or_else(|| CliError::usage(format!("--{flag} is required")))
}
