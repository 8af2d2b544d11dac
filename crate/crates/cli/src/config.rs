//! JSON run configuration.
//!
//! Every section rejects unknown keys. Optional keys take the defaults of
//! [`SolverConfig`] and are written back in resolved form to the manifest.

use std::ops::Range;

use fdot_core::problems::{
    gaussian_1d, gaussian_2d, mask_marginal, rectangle_mask, to_volume_units, toll_gate_mask, DensityUnits, Rectangle,
};
use fdot_core::{DiagramField, FundamentalDiagram, Grid, Layout, Mode, ObstacleMask, ProblemSpec, SolverConfig};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub problem: ProblemSection,
    pub solver: SolverSection,
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ProblemSection {
    pub grid: GridSection,
    pub marginals: MarginalsSection,
    pub diagram: DiagramSection,
    #[serde(default)]
    pub obstacles: ObstaclesSection,
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    /// Cells per spatial axis, one or two entries.
    pub cells: Vec<usize>,
    /// Number of time steps `P`.
    pub steps: usize,
    #[serde(default = "default_layout")]
    pub layout: String,
}

fn default_layout() -> String {
    "collocated".into()
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct MarginalsSection {
    pub initial: Marginal,
    #[serde(rename = "final")]
    pub terminal: Marginal,
}

/// Gaussian `exp(−|x−c|²/(2s²))` normalized to unit mass.
#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct Marginal {
    pub center: Vec<f64>,
    pub scale: f64,
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct DiagramSection {
    /// `greenshields`, `triangular`, `smulders` or `beta`.
    pub family: String,
    pub v0: f64,
    pub rho_hat: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho_c: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    /// `per_cell` (densities are masses per grid cell) or `per_volume`.
    #[serde(default = "default_units")]
    pub units: String,
    /// `constrained`, or `unconstrained` to switch the capacity off.
    #[serde(default = "default_mode")]
    pub mode: String,
}

fn default_units() -> String {
    "per_cell".into()
}

fn default_mode() -> String {
    "constrained".into()
}

#[derive(Clone, Debug, Default, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ObstaclesSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub toll_gate: Option<TollGate>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub rectangles: Vec<RectangleSpec>,
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct TollGate {
    pub num_blocks: usize,
    pub gap_width: usize,
    /// Half-open range `[start, end)` of rows along axis 1.
    pub band_rows: [usize; 2],
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RectangleSpec {
    pub rows: [usize; 2],
    pub cols: [usize; 2],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub times: Option<[usize; 2]>,
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    /// `drs` or `cp`.
    pub name: String,
    #[serde(default)]
    pub steps: StepsSection,
    #[serde(default)]
    pub tolerances: TolerancesSection,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_log_every")]
    pub log_every: usize,
    #[serde(default = "default_norm_iters")]
    pub norm_iters: usize,
    #[serde(default)]
    pub fuse_obstacles: bool,
    /// Wall-clock column of convergence.csv; off keeps the log reproducible.
    #[serde(default)]
    pub record_elapsed: bool,
}

fn default_max_iters() -> usize {
    SolverConfig::default().max_iters
}

fn default_log_every() -> usize {
    SolverConfig::default().log_every
}

fn default_norm_iters() -> usize {
    SolverConfig::default().norm_iters
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct StepsSection {
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub tau: Option<f64>,
    #[serde(default)]
    pub sigma: Option<f64>,
}

fn default_alpha() -> f64 {
    SolverConfig::default().alpha
}

impl Default for StepsSection {
    fn default() -> Self {
        Self {
            alpha: default_alpha(),
            tau: None,
            sigma: None,
        }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct TolerancesSection {
    #[serde(default = "default_tol_obj")]
    pub objective: f64,
    #[serde(default = "default_tol_feas")]
    pub feasibility: f64,
}

fn default_tol_obj() -> f64 {
    SolverConfig::default().tol_obj
}

fn default_tol_feas() -> f64 {
    SolverConfig::default().tol_feas
}

impl Default for TolerancesSection {
    fn default() -> Self {
        Self {
            objective: default_tol_obj(),
            feasibility: default_tol_feas(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SolverName {
    Drs,
    Cp,
}

impl SolverName {
    pub fn parse(s: &str) -> Result<Self, CliError> {
        match s {
            "drs" => Ok(Self::Drs),
            "cp" => Ok(Self::Cp),
            other => Err(CliError::Config(format!(
                "solver.name: unknown solver `{other}` (expected `drs` or `cp`)"
            ))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Drs => "drs",
            Self::Cp => "cp",
        }
    }
}

/// Configs shipped with the binary, addressable by name.
pub const BUNDLED: &[(&str, &str)] = &[
    ("bench_1d", include_str!("../configs/bench_1d.json")),
    (
        "bench_1d_unconstrained",
        include_str!("../configs/bench_1d_unconstrained.json"),
    ),
    ("obstacle_2d", include_str!("../configs/obstacle_2d.json")),
];

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        SolverName::parse(&cfg.solver.name)?;
        Ok(cfg)
    }

    /// Read `arg` as a file path, falling back to a bundled config name.
    pub fn load(arg: &str) -> Result<Self, CliError> {
        match std::fs::read_to_string(arg) {
            Ok(text) => Self::from_json(&text),
            Err(e) => match BUNDLED.iter().find(|(name, _)| *name == arg) {
                Some((_, text)) => Self::from_json(text),
                None => Err(CliError::Io(format!("{arg}: {e}"))),
            },
        }
    }

    pub fn bundled(name: &str) -> Option<Self> {
        BUNDLED
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, text)| Self::from_json(text).expect("bundled configs parse"))
    }

    pub fn solver_name(&self) -> SolverName {
        SolverName::parse(&self.solver.name).expect("checked on load")
    }

    pub fn solver_config(&self) -> Result<SolverConfig, CliError> {
        let s = &self.solver;
        let cfg = SolverConfig {
            max_iters: s.max_iters,
            tol_obj: s.tolerances.objective,
            tol_feas: s.tolerances.feasibility,
            alpha: s.steps.alpha,
            tau: s.steps.tau,
            sigma: s.steps.sigma,
            log_every: s.log_every,
            seed: s.seed,
            norm_iters: s.norm_iters,
            fuse_obstacles: s.fuse_obstacles,
            record_elapsed: s.record_elapsed,
        };
        cfg.validate().map_err(|e| CliError::Config(format!("solver: {e}")))?;
        Ok(cfg)
    }

    pub fn grid(&self) -> Result<(Grid, Layout), CliError> {
        let g = &self.problem.grid;
        let grid = Grid::new(&g.cells, g.steps).map_err(|e| CliError::Config(format!("problem.grid: {e}")))?;
        let layout = match g.layout.as_str() {
            "collocated" => Layout::Collocated,
            "staggered" => Layout::Staggered,
            other => {
                return Err(CliError::Config(format!(
                    "problem.grid.layout: unknown layout `{other}` (expected `collocated` or `staggered`)"
                )))
            }
        };
        Ok((grid, layout))
    }

    /// Diagram in densities per unit volume.
    pub fn diagram(&self, grid: &Grid) -> Result<FundamentalDiagram, CliError> {
        let d = &self.problem.diagram;
        let bad = |e: fdot_core::Error| CliError::Config(format!("problem.diagram: {e}"));
        let need = |name: &str, v: Option<f64>| {
            v.ok_or_else(|| CliError::Config(format!("problem.diagram.{name}: required for family `{}`", d.family)))
        };
        let diag = match d.family.as_str() {
            "greenshields" => FundamentalDiagram::greenshields(d.v0, d.rho_hat).map_err(bad)?,
            "triangular" => FundamentalDiagram::triangular(d.v0, d.rho_hat, need("rho_c", d.rho_c)?).map_err(bad)?,
            "smulders" => {
                FundamentalDiagram::smulders(d.v0, d.rho_hat, need("rho_c", d.rho_c)?, need("alpha", d.alpha)?).map_err(bad)?
            }
            "beta" => FundamentalDiagram::beta(d.v0, d.rho_hat, need("rho_c", d.rho_c)?, need("alpha", d.alpha)?, need("beta", d.beta)?)
                .map_err(bad)?,
            other => {
                return Err(CliError::Config(format!(
                    "problem.diagram.family: unknown family `{other}` (expected greenshields, triangular, smulders or beta)"
                )))
            }
        };
        let units = match d.units.as_str() {
            "per_cell" => DensityUnits::PerCell,
            "per_volume" => DensityUnits::PerVolume,
            other => {
                return Err(CliError::Config(format!(
                    "problem.diagram.units: unknown units `{other}` (expected `per_cell` or `per_volume`)"
                )))
            }
        };
        to_volume_units(&diag, units, grid).map_err(bad)
    }

    fn mode(&self) -> Result<Mode, CliError> {
        match self.problem.diagram.mode.as_str() {
            "constrained" => Ok(Mode::Constrained),
            "unconstrained" => Ok(Mode::Unconstrained),
            other => Err(CliError::Config(format!(
                "problem.diagram.mode: unknown mode `{other}` (expected `constrained` or `unconstrained`)"
            ))),
        }
    }

    fn mask(&self, grid: &Grid) -> Result<Option<ObstacleMask>, CliError> {
        let o = &self.problem.obstacles;
        let bad = |e: fdot_core::Error| CliError::Config(format!("problem.obstacles: {e}"));
        let range = |r: [usize; 2]| -> Range<usize> { r[0]..r[1] };
        let mut mask: Option<ObstacleMask> = None;
        if let Some(t) = &o.toll_gate {
            mask = Some(toll_gate_mask(t.num_blocks, t.gap_width, range(t.band_rows), grid).map_err(bad)?);
        }
        if !o.rectangles.is_empty() {
            let rects: Vec<Rectangle> = o
                .rectangles
                .iter()
                .map(|r| Rectangle {
                    rows: range(r.rows),
                    cols: range(r.cols),
                    times: r.times.map(range),
                })
                .collect();
            let m = rectangle_mask(&rects, grid).map_err(bad)?;
            mask = Some(match mask {
                Some(prev) => prev.union(&m).map_err(bad)?,
                None => m,
            });
        }
        Ok(mask)
    }

    /// Build the problem; marginals are zeroed on obstacles and renormalized.
    pub fn problem(&self) -> Result<ProblemSpec, CliError> {
        let (grid, layout) = self.grid()?;
        let diag = self.diagram(&grid)?;
        let mask = self.mask(&grid)?;
        let gaussian = |m: &Marginal, which: &str| {
            let bad = |e: fdot_core::Error| CliError::Config(format!("problem.marginals.{which}: {e}"));
            if m.center.len() != grid.dim() {
                return Err(CliError::Config(format!(
                    "problem.marginals.{which}.center: expected {} coordinates, got {}",
                    grid.dim(),
                    m.center.len()
                )));
            }
            match grid.dim() {
                1 => gaussian_1d(m.center[0], m.scale, &grid).map_err(bad),
                _ => gaussian_2d([m.center[0], m.center[1]], m.scale, &grid).map_err(bad),
            }
        };
        let mut mu = gaussian(&self.problem.marginals.initial, "initial")?;
        let mut nu = gaussian(&self.problem.marginals.terminal, "final")?;
        if let Some(mask) = &mask {
            let bad = |e: fdot_core::Error| CliError::Config(format!("problem.marginals: {e}"));
            mu = mask_marginal(&mu, mask, 0, &grid).map_err(bad)?;
            nu = mask_marginal(&nu, mask, grid.steps(), &grid).map_err(bad)?;
        }
        let mut p = ProblemSpec::new(grid, mu, nu, DiagramField::Uniform(diag))
            .with_layout(layout)
            .with_mode(self.mode()?);
        if let Some(mask) = mask {
            p = p.with_mask(mask);
        }
        Ok(p)
    }
}
