//! Output files of a run.
//!
//! Numbers are written with `{:.16e}` (17 significant digits), which parses
//! back to the identical `f64`.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use fdot_core::grid::midpoint_average;
use fdot_core::{
    ConvergenceRecord, Family, FundamentalDiagram, Grid, Layout, ProblemSpec, SolveOutput, TransportState,
};
use ndarray::{Array3, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::CliError;

pub const CONVERGENCE_HEADER: &str = "iter,objective,continuity_residual,fd_violation,step_change,elapsed_s";

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
pub struct RunManifest {
    pub version: String,
    /// Resolved configuration, defaults included.
    pub config: RunConfig,
    pub solver: String,
    pub layout: String,
    pub cells: Vec<usize>,
    pub steps: usize,
    pub seed: u64,
    /// Diagram the solver enforced, densities per unit volume.
    pub diagram: DiagramRecord,
    pub iterations: usize,
    pub converged: bool,
    pub objective: f64,
    pub continuity_residual: f64,
    pub fd_violation: f64,
    pub slice_masses: Vec<f64>,
    pub wall_time_s: f64,
    /// Paths relative to the output directory.
    pub files: Vec<FileRecord>,
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
pub struct DiagramRecord {
    pub family: String,
    pub v0: f64,
    pub rho_hat: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho_c: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    pub critical_density: f64,
    pub critical_flux: f64,
}

impl DiagramRecord {
    pub fn from_diagram(d: &FundamentalDiagram) -> Self {
        let (critical_density, critical_flux) = d.critical_point();
        let (family, rho_c, alpha, beta) = match d.family() {
            Family::Greenshields => ("greenshields", None, None, None),
            Family::Triangular { rho_c, .. } => ("triangular", Some(rho_c), None, None),
            Family::Beta { rho_c, alpha, beta, .. } => ("beta", Some(rho_c), Some(alpha), Some(beta)),
        };
        Self {
            family: family.into(),
            v0: d.v0(),
            rho_hat: d.rho_hat(),
            rho_c,
            alpha,
            beta,
            critical_density,
            critical_flux,
        }
    }

    /// Rebuild the diagram from the recorded parameters.
    pub fn diagram(&self) -> fdot_core::Result<FundamentalDiagram> {
        let missing = || fdot_core::Error::InvalidParameter(format!("{} diagram record is incomplete", self.family));
        match self.family.as_str() {
            "greenshields" => FundamentalDiagram::greenshields(self.v0, self.rho_hat),
            "triangular" => FundamentalDiagram::triangular(self.v0, self.rho_hat, self.rho_c.ok_or_else(missing)?),
            _ => FundamentalDiagram::beta(
                self.v0,
                self.rho_hat,
                self.rho_c.ok_or_else(missing)?,
                self.alpha.ok_or_else(missing)?,
                self.beta.ok_or_else(missing)?,
            ),
        }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
pub struct FileRecord {
    pub path: String,
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shape: Option<Vec<usize>>,
}

fn num(v: f64) -> String {
    format!("{v:.16e}")
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn io(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError::Io(format!("{}: {e}", path.display()))
}

/// Headerless row-major matrix, one line per index of axis 0.
pub fn write_matrix(path: &Path, a: ArrayView2<f64>) -> Result<(), CliError> {
    let mut w = create(path)?;
    for row in a.outer_iter() {
        let line: Vec<String> = row.iter().map(|v| num(*v)).collect();
        writeln!(w, "{}", line.join(",")).map_err(io(path))?;
    }
    w.flush().map_err(io(path))
}

/// Parse a file written by [`write_matrix`].
pub fn read_matrix(path: &Path) -> Result<Vec<Vec<f64>>, CliError> {
    let text = std::fs::read_to_string(path).map_err(io(path))?;
    text.lines()
        .map(|l| {
            l.split(',')
                .map(|t| {
                    t.parse::<f64>()
                        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
                })
                .collect()
        })
        .collect()
}

pub fn write_convergence(path: &Path, log: &[ConvergenceRecord]) -> Result<(), CliError> {
    let ergodic = log.iter().any(|r| r.ergodic_objective.is_some());
    let mut w = create(path)?;
    let header = if ergodic {
        format!("{CONVERGENCE_HEADER},ergodic_objective")
    } else {
        CONVERGENCE_HEADER.to_string()
    };
    writeln!(w, "{header}").map_err(io(path))?;
    for r in log {
        write!(
            w,
            "{},{},{},{},{},{}",
            r.iter,
            num(r.objective),
            num(r.continuity_residual),
            num(r.fd_violation),
            num(r.step_change),
            num(r.elapsed)
        )
        .map_err(io(path))?;
        if ergodic {
            write!(w, ",{}", num(r.ergodic_objective.unwrap_or(f64::NAN))).map_err(io(path))?;
        }
        writeln!(w).map_err(io(path))?;
    }
    w.flush().map_err(io(path))
}

fn write_raw(path: &Path, a: &Array3<f64>) -> Result<(), CliError> {
    let mut w = create(path)?;
    for v in a.iter() {
        w.write_all(&v.to_le_bytes()).map_err(io(path))?;
    }
    w.flush().map_err(io(path))
}

/// Cell-centered view of the state: staggered states are averaged onto the
/// collocated lattice.
fn centered(x: &TransportState, grid: &Grid) -> Result<TransportState, CliError> {
    match x.layout {
        Layout::Collocated => Ok(x.clone()),
        Layout::Staggered => midpoint_average(x, grid).map_err(|e| CliError::Solver(e.to_string())),
    }
}

/// Write every output file of a finished run and the manifest listing them.
pub fn write_outputs(
    cfg: &RunConfig,
    problem: &ProblemSpec,
    out: &SolveOutput,
    dir: &Path,
    raw: bool,
    wall_time_s: f64,
) -> Result<RunManifest, CliError> {
    std::fs::create_dir_all(dir).map_err(io(dir))?;
    let grid = &problem.grid;
    let x = &out.solution;
    let mut files = Vec::new();
    let mut push = |path: String, kind: &str, shape: Option<Vec<usize>>| {
        files.push(FileRecord {
            path,
            kind: kind.into(),
            shape,
        })
    };

    for (k, slice) in x.rho.outer_iter().enumerate() {
        let name = format!("rho_t{k}.csv");
        write_matrix(&dir.join(&name), slice)?;
        push(name, "rho", Some(slice.shape().to_vec()));
    }
    for (a, m) in x.m.iter().enumerate() {
        for (k, slice) in m.outer_iter().enumerate() {
            let name = format!("m{a}_t{k}.csv");
            write_matrix(&dir.join(&name), slice)?;
            push(name, "momentum", Some(slice.shape().to_vec()));
        }
    }

    let name = "convergence.csv".to_string();
    write_convergence(&dir.join(&name), &out.log)?;
    push(name, "convergence", None);

    let field = problem.effective_diagram();
    let c = centered(x, grid)?;
    for k in 0..c.rho.len_of(Axis(0)) {
        let name = format!("fd_scatter_t{k}.csv");
        let path = dir.join(&name);
        let mut w = create(&path)?;
        writeln!(w, "rho,flux_magnitude,capacity").map_err(io(&path))?;
        for ((i, j), &rho) in c.rho.index_axis(Axis(0), k).indexed_iter() {
            let flux = c.m.iter().map(|m| m[[k, i, j]].powi(2)).sum::<f64>().sqrt();
            let cap = field.at(k, i, j).q(rho);
            writeln!(w, "{},{},{}", num(rho), num(flux), num(cap)).map_err(io(&path))?;
        }
        w.flush().map_err(io(&path))?;
        push(name, "fd_scatter", None);
    }

    let masses = x.slice_masses(grid);
    let name = "mass.csv".to_string();
    let path = dir.join(&name);
    let mut w = create(&path)?;
    writeln!(w, "k,mass").map_err(io(&path))?;
    for (k, m) in masses.iter().enumerate() {
        writeln!(w, "{k},{}", num(*m)).map_err(io(&path))?;
    }
    w.flush().map_err(io(&path))?;
    push(name, "mass", None);

    if raw {
        let name = "rho.f64".to_string();
        write_raw(&dir.join(&name), &x.rho)?;
        push(name, "raw_rho", Some(x.rho.shape().to_vec()));
        for (a, m) in x.m.iter().enumerate() {
            let name = format!("m{a}.f64");
            write_raw(&dir.join(&name), m)?;
            push(name, "raw_momentum", Some(m.shape().to_vec()));
        }
    }

    let name = "manifest.json".to_string();
    push(name.clone(), "manifest", None);
    let manifest = RunManifest {
        version: env!("CARGO_PKG_VERSION").into(),
        config: cfg.clone(),
        solver: cfg.solver_name().as_str().into(),
        layout: problem.layout.name().into(),
        cells: grid.cells().to_vec(),
        steps: grid.steps(),
        seed: cfg.solver.seed,
        diagram: DiagramRecord::from_diagram(field.at(0, 0, 0)),
        iterations: out.iterations,
        converged: out.converged,
        objective: out.objective,
        continuity_residual: out.continuity_residual,
        fd_violation: out.fd_violation,
        slice_masses: masses,
        wall_time_s,
        files,
    };
    let path = dir.join(&name);
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::Io(e.to_string()))?;
    std::fs::write(&path, text + "\n").map_err(io(&path))?;
    Ok(manifest)
}
