use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fdot::{diagnostics, execute, CliError, RunConfig, SolverName};
use fdot_core::grid::estimate_operator_norm_seeded;
use fdot_core::{Grid, Layout};

/// Dynamic optimal transport under fundamental-diagram capacity constraints.
#[derive(Parser)]
#[command(name = "fdot", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve a problem and write fields, logs and the manifest to --out.
    Run {
        /// Config file, or a bundled name (bench_1d, bench_1d_unconstrained, obstacle_2d).
        config: String,
        #[arg(long)]
        out: PathBuf,
        /// Override solver.name (drs or cp).
        #[arg(long)]
        solver: Option<String>,
        #[arg(long)]
        max_iters: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Also dump raw little-endian f64 arrays.
        #[arg(long)]
        raw: bool,
    },
    /// Check a config and its problem without solving.
    Validate { config: String },
    /// Print the estimated norm of the space-time divergence for a grid.
    NormEstimate {
        /// Take the grid from this config instead of --cells/--steps.
        config: Option<String>,
        /// Cells per spatial axis, e.g. 48,48.
        #[arg(long, value_delimiter = ',')]
        cells: Vec<usize>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long, default_value = "collocated")]
        layout: String,
        #[arg(long, default_value_t = 200)]
        iters: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Print the version.
    Version,
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run {
            config,
            out,
            solver,
            max_iters,
            seed,
            raw,
        } => {
            let mut cfg = RunConfig::load(&config)?;
            if let Some(s) = solver {
                cfg.solver.name = SolverName::parse(&s)?.as_str().into();
            }
            if let Some(n) = max_iters {
                cfg.solver.max_iters = n;
            }
            if let Some(s) = seed {
                cfg.solver.seed = s;
            }
            let m = execute(&cfg, &out, raw)?;
            println!(
                "{}: {} iterations, objective {:.6e}, residual {:.3e}, violation {:.3e}, {} files in {}",
                m.solver,
                m.iterations,
                m.objective,
                m.continuity_residual,
                m.fd_violation,
                m.files.len(),
                out.display()
            );
            Ok(())
        }
        Command::Validate { config } => {
            let cfg = RunConfig::load(&config)?;
            let diags = diagnostics(&cfg)?;
            let mut errors = Vec::new();
            for (is_error, msg) in diags {
                if is_error {
                    errors.push(msg);
                } else {
                    println!("warning: {msg}");
                }
            }
            if errors.is_empty() {
                println!("ok");
                Ok(())
            } else {
                Err(CliError::Validation(errors.join("; ")))
            }
        }
        Command::NormEstimate {
            config,
            cells,
            steps,
            layout,
            iters,
            seed,
        } => {
            let (grid, layout) = match config {
                Some(c) => RunConfig::load(&c)?.grid()?,
                None => {
                    let steps = steps.ok_or_else(|| CliError::Config("--steps is required without a config".into()))?;
                    let grid =
                        Grid::new(&cells, steps).map_err(|e| CliError::Config(format!("--cells/--steps: {e}")))?;
                    let layout = match layout.as_str() {
                        "collocated" => Layout::Collocated,
                        "staggered" => Layout::Staggered,
                        other => return Err(CliError::Config(format!("--layout: unknown layout `{other}`"))),
                    };
                    (grid, layout)
                }
            };
            if iters == 0 {
                return Err(CliError::Config("--iters must be at least 1".into()));
            }
            println!("{:.12e}", estimate_operator_norm_seeded(&grid, layout, iters, seed));
            Ok(())
        }
        Command::Version => {
            println!("fdot {}", env!("CARGO_PKG_VERSION"));
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
