//! Driver behind the `fdot` binary: config loading, solver dispatch and the
//! output writers.

use std::fmt;
use std::path::Path;
use std::time::Instant;

use fdot_core::{run_cp, run_drs, validate, Severity, SolveOutput};

pub mod config;
pub mod output;

pub use config::{RunConfig, SolverName};
pub use output::{write_outputs, RunManifest};

/// Failure classes, one per exit code.
#[derive(Debug, Clone, PartialEq)]
pub enum CliError {
    /// Malformed or inconsistent configuration.
    Config(String),
    /// The problem failed validation.
    Validation(String),
    Solver(String),
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) | Self::Validation(_) => 1,
            Self::Solver(_) => 2,
            Self::Io(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Config(m) => write!(f, "config error: {m}"),
            Self::Validation(m) => write!(f, "validation failed: {m}"),
            Self::Solver(m) => write!(f, "solver failed: {m}"),
            Self::Io(m) => write!(f, "I/O error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::Io(e.to_string())
    }
}

fn solver_error(e: fdot_core::Error) -> CliError {
    match e {
        fdot_core::Error::InvalidParameter(_) | fdot_core::Error::InvalidProblem(_) => {
            CliError::Validation(e.to_string())
        }
        other => CliError::Solver(other.to_string()),
    }
}

/// Validation messages as `(is_error, message)`.
pub fn diagnostics(cfg: &RunConfig) -> Result<Vec<(bool, String)>, CliError> {
    let problem = cfg.problem()?;
    cfg.solver_config()?;
    Ok(validate(&problem)
        .into_iter()
        .map(|d| (d.severity == Severity::Error, d.message))
        .collect())
}

/// Validate, solve and write every output file into `out_dir`.
pub fn execute(cfg: &RunConfig, out_dir: &Path, raw: bool) -> Result<RunManifest, CliError> {
    let problem = cfg.problem()?;
    let solver_cfg = cfg.solver_config()?;
    let mut errors = Vec::new();
    for d in validate(&problem) {
        match d.severity {
            Severity::Error => errors.push(d.message),
            Severity::Warning => eprintln!("warning: {}", d.message),
        }
    }
    if !errors.is_empty() {
        return Err(CliError::Validation(errors.join("; ")));
    }
    let start = Instant::now();
    let out: SolveOutput = match cfg.solver_name() {
        SolverName::Drs => run_drs(&problem, &solver_cfg),
        SolverName::Cp => run_cp(&problem, &solver_cfg),
    }
    .map_err(solver_error)?;
    let wall = start.elapsed().as_secs_f64();
    write_outputs(cfg, &problem, &out, out_dir, raw, wall)
}
