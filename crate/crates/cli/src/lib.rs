//! Command-line front end: seeded experiments with CSV and JSON outputs.
//!
//! Exit codes: 0 success, 1 failed verification, 2 bad input.

pub mod config;
pub mod experiments;

use std::ffi::OsString;
use std::io::Write;
use std::path::Path;

use clap::{Parser, Subcommand};
use dirbit_core::{Error, Result};
use serde_json::json;

use config::{resolve, Experiment, Flags, Format, RunConfig};

pub const VERSION: &str = concat!("dirbit ", env!("CARGO_PKG_VERSION"));

pub const EXIT_OK: i32 = 0;
pub const EXIT_VERIFICATION: i32 = 1;
pub const EXIT_INPUT: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "dirbit", version, about = "Direction-bit experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Send random directions through noisy spin measurements and decode them.
    Transmit(Flags),
    /// Estimate angles between hidden devices from outcome probabilities.
    Angle(Flags),
    /// Cross-check the norm order against LP certificates.
    Majorize(Flags),
    /// Verify the frame-bit norm counterexample with exact rationals.
    FramebitVerify(Flags),
    /// Membership of a bipartite vector, or the built-in composite checks.
    CompositeCheck(Flags),
    /// Feasible bipartite generators and admissibility witnesses.
    InteractionScan(Flags),
    /// Perfect-distinguishability capacity of reference state spaces.
    Capacity(Flags),
}

impl Command {
    fn split(&self) -> (Experiment, &Flags) {
        match self {
            Command::Transmit(f) => (Experiment::Transmit, f),
            Command::Angle(f) => (Experiment::Angle, f),
            Command::Majorize(f) => (Experiment::Majorize, f),
            Command::FramebitVerify(f) => (Experiment::FramebitVerify, f),
            Command::CompositeCheck(f) => (Experiment::CompositeCheck, f),
            Command::InteractionScan(f) => (Experiment::InteractionScan, f),
            Command::Capacity(f) => (Experiment::Capacity, f),
        }
    }
}

fn thread_pool() -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(raw) = std::env::var("DIRBIT_THREADS") {
        let n: usize = raw
            .trim()
            .parse()
            .ok()
            .filter(|n| *n > 0)
            .ok_or_else(|| Error::InvalidInput(format!("DIRBIT_THREADS must be a positive integer, got '{raw}'")))?;
        builder = builder.num_threads(n);
    }
    builder
        .build()
        .map_err(|e| Error::Numerical(format!("cannot start thread pool: {e}")))
}

fn write_output(path: Option<&Path>, text: &str, stdout: &mut dyn Write) -> Result<()> {
    let res = match path {
        Some(p) => std::fs::write(p, text),
        None => stdout.write_all(text.as_bytes()),
    };
    res.map_err(|e| Error::InvalidInput(format!("cannot write output: {e}")))
}

fn execute(cfg: &RunConfig, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<bool> {
    let outcome = thread_pool()?.install(|| experiments::run(cfg))?;
    let doc = json!({
        "version": VERSION,
        "config": cfg,
        "passed": outcome.passed,
        "result": outcome.result,
    });
    let doc = serde_json::to_string_pretty(&doc).expect("serializable") + "\n";
    match cfg.format {
        Format::Json => write_output(cfg.out.as_deref(), &doc, stdout)?,
        Format::Csv => {
            write_output(cfg.out.as_deref(), &outcome.csv, stdout)?;
            match &cfg.out {
                Some(p) => write_output(Some(&p.with_extension("summary.json")), &doc, stdout)?,
                None => {
                    let _ = stderr.write_all(doc.as_bytes());
                }
            }
        }
    }
    Ok(outcome.passed)
}

/// Parses `args` (including the program name) and runs the experiment.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if code == EXIT_OK { stdout.write_all(text.as_bytes()) } else { stderr.write_all(text.as_bytes()) };
            return code;
        }
    };
    let (experiment, flags) = cli.command.split();
    let result = resolve(experiment, flags).and_then(|cfg| execute(&cfg, stdout, stderr));
    match result {
        Ok(true) => EXIT_OK,
        Ok(false) => {
            let _ = writeln!(stderr, "verification failed");
            EXIT_VERIFICATION
        }
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            if e.is_input_error() {
                EXIT_INPUT
            } else {
                EXIT_VERIFICATION
            }
        }
    }
}
