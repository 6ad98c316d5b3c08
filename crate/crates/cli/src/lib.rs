//! The `g3` command-line front end.

pub mod config;
pub mod merge;
pub mod suites;

use std::ffi::OsString;
use std::io::Write;

use clap::Parser;
use thiserror::Error;

use config::{Cli, Command, RunConfig};
use suites::SuiteReport;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            _ => 1,
        }
    }
}

fn init_threads() -> Result<(), CliError> {
    let Ok(v) = std::env::var("G3_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| CliError::Config(format!("G3_THREADS must be a positive integer, got `{v}`")))?;
    // a second initialisation in the same process keeps the first pool
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

/// Human summary to stdout, JSON to `--json` when given and to stdout otherwise
/// (the summary then goes to stderr).
fn emit(rep: &SuiteReport, cfg: &RunConfig) -> Result<(), CliError> {
    let json = serde_json::to_string_pretty(rep).map_err(|e| CliError::Runtime(e.to_string()))?;
    let mut summary = String::new();
    for e in &rep.entries {
        summary += &format!("{e}\n");
    }
    for s in &rep.skipped {
        summary += &format!("SKIP {s}\n");
    }
    for s in &rep.slopes {
        summary += &format!("slope {:<28} N {:?} values {:?} -> {:.3}\n", s.quantity, s.n, s.values, s.slope);
    }
    if let Some(p) = &rep.snapshot {
        summary += &format!("snapshot written to {}\n", p.display());
    }
    summary += &format!("{} {} ({} entries)\n", if rep.pass { "PASS" } else { "FAIL" }, rep.suite, rep.entries.len());
    match &cfg.json {
        Some(p) => {
            std::fs::write(p, json + "\n")?;
            print!("{summary}");
        }
        None => {
            eprint!("{summary}");
            println!("{json}");
        }
    }
    Ok(())
}

fn run_command(cmd: Command) -> Result<i32, CliError> {
    init_threads()?;
    let (name, args, f): (&str, _, fn(&RunConfig) -> Result<SuiteReport, CliError>) = match cmd {
        Command::VerifyAlgebra(a) => ("verify-algebra", a, suites::verify_algebra),
        Command::VerifyIdentities(a) => ("verify-identities", a, suites::verify_identities),
        Command::Solve(a) => ("solve", a, suites::solve),
        Command::Report(r) => {
            let m = merge::merge(&r.paths)?;
            for w in &m.warnings {
                eprintln!("{w}");
            }
            print!("{}", m.text());
            if let Some(p) = &r.csv {
                m.write_csv(std::fs::File::create(p)?)?;
            }
            return Ok(if m.all_pass() { 0 } else { 1 });
        }
    };
    let cfg = RunConfig::resolve(name, &args)?;
    let rep = f(&cfg)?;
    emit(&rep, &cfg)?;
    Ok(if rep.pass { 0 } else { 1 })
}

/// Parses `args` (including the program name) and runs; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run_command(cli.command) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(std::io::stderr(), "g3: {e}");
            e.exit_code()
        }
    }
}
