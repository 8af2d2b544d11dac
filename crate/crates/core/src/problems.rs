//! Problem construction: marginals, obstacles, diagram fields, validation.

use std::ops::Range;

use ndarray::{Array2, Array3, Axis};

use crate::continuity::ContinuityRhs;
use crate::diagram::{DiagramField, FundamentalDiagram};
use crate::error::{Error, Result};
use crate::grid::{Grid, Layout, TransportState};
use crate::prox::ObstacleMask;

/// Values below this are treated as zero density.
pub const DENSITY_FLOOR: f64 = 1e-15;
const MASS_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Constrained,
    /// Capacity replaced by a Greenshields diagram with `ρ̂ = 1e6`, `v0 = 1e3`.
    Unconstrained,
}

/// Units of the density parameters of a diagram.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DensityUnits {
    /// Mass per unit volume, the unit of the marginals.
    PerVolume,
    /// Mass per grid cell; divided by the cell volume on load.
    PerCell,
}

/// Convert `diag` from `units` to densities per unit volume on `grid`.
pub fn to_volume_units(diag: &FundamentalDiagram, units: DensityUnits, grid: &Grid) -> Result<FundamentalDiagram> {
    match units {
        DensityUnits::PerVolume => Ok(*diag),
        DensityUnits::PerCell => diag.rescale_density(1.0 / grid.cell_volume()),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProblemSpec {
    pub grid: Grid,
    pub layout: Layout,
    /// Initial density, shape `(n0, n1)` with `n1 = 1` in 1D.
    pub mu: Array2<f64>,
    /// Terminal density.
    pub nu: Array2<f64>,
    pub diagram: DiagramField,
    pub mask: Option<ObstacleMask>,
    pub mode: Mode,
}

impl ProblemSpec {
    /// Collocated, constrained problem without obstacles.
    pub fn new(grid: Grid, mu: Array2<f64>, nu: Array2<f64>, diagram: DiagramField) -> Self {
        Self {
            grid,
            layout: Layout::Collocated,
            mu,
            nu,
            diagram,
            mask: None,
            mode: Mode::Constrained,
        }
    }

    pub fn with_layout(mut self, layout: Layout) -> Self {
        self.layout = layout;
        self
    }

    pub fn with_mode(mut self, mode: Mode) -> Self {
        self.mode = mode;
        self
    }

    pub fn with_mask(mut self, mask: ObstacleMask) -> Self {
        self.mask = Some(mask);
        self
    }

    /// Diagram field the solvers actually enforce.
    pub fn effective_diagram(&self) -> DiagramField {
        match self.mode {
            Mode::Constrained => self.diagram.clone(),
            Mode::Unconstrained => DiagramField::Uniform(unconstrained_diagram()),
        }
    }

    pub fn rhs(&self) -> Result<ContinuityRhs> {
        ContinuityRhs::from_marginals(&self.grid, self.layout, &self.mu, &self.nu)
    }

    /// State that is zero except for the marginal slices.
    pub fn pinned_state(&self) -> TransportState {
        let mut x = TransportState::zeros(&self.grid, self.layout);
        let last = x.rho.len_of(Axis(0)) - 1;
        x.rho.index_axis_mut(Axis(0), 0).assign(&self.mu);
        x.rho.index_axis_mut(Axis(0), last).assign(&self.nu);
        x
    }

    /// Errors from [`validate`] as a single `Err`.
    pub fn check(&self) -> Result<()> {
        let errors: Vec<String> = validate(self)
            .into_iter()
            .filter(|d| d.severity == Severity::Error)
            .map(|d| d.message)
            .collect();
        if errors.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidProblem(errors.join("; ")))
        }
    }
}

pub fn unconstrained_diagram() -> FundamentalDiagram {
    FundamentalDiagram::greenshields(1e3, 1e6).expect("valid constants")
}

fn mass(f: &Array2<f64>, grid: &Grid) -> f64 {
    f.sum() * grid.cell_volume()
}

fn normalize(mut f: Array2<f64>, grid: &Grid) -> Result<Array2<f64>> {
    f.mapv_inplace(|v| if v < DENSITY_FLOOR { 0.0 } else { v });
    let total = mass(&f, grid);
    if !(total > 0.0 && total.is_finite()) {
        return Err(Error::InvalidParameter("density has no mass on the grid".into()));
    }
    f.mapv_inplace(|v| v / total);
    Ok(f)
}

fn check_scale(scale: f64) -> Result<()> {
    if scale.is_finite() && scale > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("degenerate Gaussian scale {scale}")))
    }
}

fn check_center(c: f64) -> Result<()> {
    if c > 0.0 && c < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("center {c} outside (0, 1)")))
    }
}

/// Unit-mass Gaussian `exp(−(x−c)²/(2s²))` sampled at cell centers, with
/// values below `1e-15` set to zero.
pub fn gaussian_1d(center: f64, scale: f64, grid: &Grid) -> Result<Array2<f64>> {
    if grid.dim() != 1 {
        return Err(Error::InvalidGrid("gaussian_1d needs a 1D grid".into()));
    }
    check_center(center)?;
    check_scale(scale)?;
    let n = grid.cells()[0];
    let f = Array2::from_shape_fn((n, 1), |(i, _)| {
        let d = grid.cell_center(0, i) - center;
        (-0.5 * d * d / (scale * scale)).exp()
    });
    normalize(f, grid)
}

/// Isotropic 2D analogue of [`gaussian_1d`].
pub fn gaussian_2d(center: [f64; 2], scale: f64, grid: &Grid) -> Result<Array2<f64>> {
    if grid.dim() != 2 {
        return Err(Error::InvalidGrid("gaussian_2d needs a 2D grid".into()));
    }
    check_center(center[0])?;
    check_center(center[1])?;
    check_scale(scale)?;
    let (n0, n1) = grid.spatial_shape();
    let f = Array2::from_shape_fn((n0, n1), |(i, j)| {
        let dx = grid.cell_center(0, i) - center[0];
        let dy = grid.cell_center(1, j) - center[1];
        (-0.5 * (dx * dx + dy * dy) / (scale * scale)).exp()
    });
    normalize(f, grid)
}

/// Zero `f` on cells blocked at time node `k` and renormalize to unit mass.
pub fn mask_marginal(f: &Array2<f64>, mask: &ObstacleMask, k: usize, grid: &Grid) -> Result<Array2<f64>> {
    let mut out = f.clone();
    for ((i, j), v) in out.indexed_iter_mut() {
        if !mask.is_free(k, i, j) {
            *v = 0.0;
        }
    }
    normalize(out, grid)
}

/// Horizontal barrier across rows `band_rows` of axis 1. The band is split
/// into `num_blocks` equal tiles along axis 0, each with a gap of
/// `gap_width` cells at its center; everything else in the band is blocked.
/// `num_blocks = 0` gives an all-free mask.
pub fn toll_gate_mask(
    num_blocks: usize,
    gap_width: usize,
    band_rows: Range<usize>,
    grid: &Grid,
) -> Result<ObstacleMask> {
    if grid.dim() != 2 {
        return Err(Error::InvalidGrid("toll gates need a 2D grid".into()));
    }
    let (n0, n1) = grid.spatial_shape();
    let mut free = Array3::from_elem((1, n0, n1), true);
    if num_blocks == 0 {
        return Ok(ObstacleMask::new(free));
    }
    if gap_width == 0 {
        return Err(Error::InvalidParameter(
            "toll gate without gaps blocks all traffic".into(),
        ));
    }
    if band_rows.is_empty() || band_rows.end > n1 {
        return Err(Error::InvalidParameter(format!(
            "band rows {band_rows:?} do not fit {n1} rows"
        )));
    }
    if num_blocks * gap_width > n0 {
        return Err(Error::InvalidParameter(format!(
            "{num_blocks} gaps of width {gap_width} do not fit {n0} columns"
        )));
    }
    let gaps: Vec<Range<usize>> = (0..num_blocks)
        .map(|g| {
            let center = (2 * g + 1) as f64 * n0 as f64 / (2 * num_blocks) as f64;
            let start = (center - gap_width as f64 / 2.0).round().max(0.0) as usize;
            let start = start.min(n0 - gap_width);
            start..start + gap_width
        })
        .collect();
    for i in 0..n0 {
        if gaps.iter().any(|g| g.contains(&i)) {
            continue;
        }
        for j in band_rows.clone() {
            free[[0, i, j]] = false;
        }
    }
    Ok(ObstacleMask::new(free))
}

/// Gap column ranges of a toll-gate layout (same rule as [`toll_gate_mask`]).
pub fn toll_gate_gaps(num_blocks: usize, gap_width: usize, n0: usize) -> Vec<Range<usize>> {
    (0..num_blocks)
        .map(|g| {
            let center = (2 * g + 1) as f64 * n0 as f64 / (2 * num_blocks) as f64;
            let start = (center - gap_width as f64 / 2.0).round().max(0.0) as usize;
            let start = start.min(n0.saturating_sub(gap_width));
            start..start + gap_width
        })
        .collect()
}

/// Axis-aligned blocked rectangle in cell indices, optionally limited to a
/// range of time nodes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Rectangle {
    pub rows: Range<usize>,
    pub cols: Range<usize>,
    pub times: Option<Range<usize>>,
}

/// Mask blocking the union of `rects`. Time-limited rectangles make the mask
/// time varying.
pub fn rectangle_mask(rects: &[Rectangle], grid: &Grid) -> Result<ObstacleMask> {
    let (n0, n1) = grid.spatial_shape();
    let varying = rects.iter().any(|r| r.times.is_some());
    let t = if varying { grid.steps() + 1 } else { 1 };
    let mut free = Array3::from_elem((t, n0, n1), true);
    for r in rects {
        if r.rows.end > n0 || r.cols.end > n1 || r.rows.is_empty() || r.cols.is_empty() {
            return Err(Error::InvalidParameter(format!(
                "rectangle {r:?} outside the {n0}x{n1} grid"
            )));
        }
        let times = r.times.clone().unwrap_or(0..t);
        if times.end > t {
            return Err(Error::InvalidParameter(format!(
                "rectangle {r:?} outside the time range"
            )));
        }
        for k in times {
            for i in r.rows.clone() {
                for j in r.cols.clone() {
                    free[[k, i, j]] = false;
                }
            }
        }
    }
    Ok(ObstacleMask::new(free))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Diagnostic {
    pub severity: Severity,
    pub message: String,
}

impl Diagnostic {
    fn error(message: impl Into<String>) -> Self {
        Self {
            severity: Severity::Error,
            message: message.into(),
        }
    }

    fn warning(message: impl Into<String>) -> Self {
        Self {
            severity: Severity::Warning,
            message: message.into(),
        }
    }
}

impl std::fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let tag = match self.severity {
            Severity::Error => "error",
            Severity::Warning => "warning",
        };
        write!(f, "{tag}: {}", self.message)
    }
}

/// Screen a problem for errors and probable infeasibility.
pub fn validate(problem: &ProblemSpec) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    let grid = &problem.grid;
    let (n0, n1) = grid.spatial_shape();
    let mut shapes_ok = true;
    for (name, f) in [("mu", &problem.mu), ("nu", &problem.nu)] {
        if f.shape() != [n0, n1] {
            out.push(Diagnostic::error(format!(
                "{name} has shape {:?}, grid needs [{n0}, {n1}]",
                f.shape()
            )));
            shapes_ok = false;
        } else if f.iter().any(|v| !v.is_finite() || *v < 0.0) {
            out.push(Diagnostic::error(format!("{name} has negative or non-finite values")));
        }
    }
    if let Err(e) = problem.diagram.check_shape(grid) {
        out.push(Diagnostic::error(format!("diagram field: {e}")));
    }
    if let Some(mask) = &problem.mask {
        if let Err(e) = mask.check_shape(grid) {
            out.push(Diagnostic::error(format!("obstacle mask: {e}")));
            shapes_ok = false;
        }
    }
    if !shapes_ok {
        return out;
    }

    let (m_mu, m_nu) = (mass(&problem.mu, grid), mass(&problem.nu, grid));
    if (m_mu - m_nu).abs() > MASS_TOL * m_mu.abs().max(m_nu.abs()) {
        out.push(Diagnostic::error(format!(
            "unequal masses: mu has {m_mu}, nu has {m_nu}"
        )));
    } else if (m_mu - 1.0).abs() > MASS_TOL {
        out.push(Diagnostic::error(format!("marginals must have unit mass, got {m_mu}")));
    }

    if let Some(mask) = &problem.mask {
        for (name, f, k) in [("mu", &problem.mu, 0), ("nu", &problem.nu, grid.steps())] {
            let blocked: f64 = f
                .indexed_iter()
                .filter(|((i, j), _)| !mask.is_free(k, *i, *j))
                .map(|(_, v)| *v)
                .fold(0.0, f64::max);
            if blocked > DENSITY_FLOOR {
                out.push(Diagnostic::error(format!(
                    "mass on obstacles: {name} reaches {blocked:e} on a blocked cell"
                )));
            }
        }
    }

    if out.iter().all(|d| d.severity != Severity::Error) {
        if let Some(w) = capacity_warning(problem) {
            out.push(w);
        }
    }
    out
}

fn centroid(f: &Array2<f64>, grid: &Grid) -> [f64; 2] {
    let total = f.sum();
    let mut c = [0.0; 2];
    for ((i, j), v) in f.indexed_iter() {
        c[0] += v * grid.cell_center(0, i);
        c[1] += v * grid.cell_center(1, j);
    }
    [c[0] / total, c[1] / total]
}

/// Compare the mean flux needed to move the centroid with the largest flux
/// that can cross the narrowest section between the two centroids.
fn capacity_warning(problem: &ProblemSpec) -> Option<Diagnostic> {
    let grid = &problem.grid;
    let field = problem.effective_diagram();
    let (a, b) = (centroid(&problem.mu, grid), centroid(&problem.nu, grid));
    let axis = (0..grid.dim())
        .max_by(|&x, &y| (a[x] - b[x]).abs().total_cmp(&(b[y] - a[y]).abs()))
        .unwrap_or(0);
    let required = (b[axis] - a[axis]).abs();
    if required == 0.0 {
        return None;
    }
    let n = grid.cells()[axis];
    let cell_of = |x: f64| ((x * n as f64).floor() as usize).min(n - 1);
    let (lo, hi) = {
        let (p, q) = (cell_of(a[axis]), cell_of(b[axis]));
        (p.min(q), p.max(q))
    };
    let other = 1 - axis;
    let n_other = grid.spatial_shape_axis(other);
    let width = if grid.dim() == 2 { grid.dx(other) } else { 1.0 };
    let mut narrowest = f64::INFINITY;
    for c in lo..=hi {
        let mut cap = 0.0f64;
        for t in 0..n_other {
            let (i, j) = if axis == 0 { (c, t) } else { (t, c) };
            let mut best_k = 0.0f64;
            for k in 0..=grid.steps() {
                let free = problem.mask.as_ref().is_none_or(|m| m.is_free(k, i, j));
                if free {
                    best_k = best_k.max(field.at(k, i, j).critical_point().1);
                }
            }
            cap += best_k * width;
        }
        narrowest = narrowest.min(cap);
    }
    (required > narrowest).then(|| {
        Diagnostic::warning(format!(
            "probably infeasible: moving the centroid needs mean flux {required:.3e} \
             but at most {narrowest:.3e} can cross along axis {axis}"
        ))
    })
}

/// Linear interpolation `(1−t)μ + tν` with zero momentum, masked by obstacles.
pub fn initialize(problem: &ProblemSpec) -> TransportState {
    let grid = &problem.grid;
    let p = grid.steps() as f64;
    let mut x = problem.pinned_state();
    let levels = x.rho.len_of(Axis(0));
    for s in 1..levels - 1 {
        let t = match problem.layout {
            Layout::Collocated => s as f64 / p,
            Layout::Staggered => (s as f64 - 0.5) / p,
        };
        let slice = (1.0 - t) * &problem.mu + t * &problem.nu;
        x.rho.index_axis_mut(Axis(0), s).assign(&slice);
    }
    if let Some(mask) = &problem.mask {
        let pinned = x.clone();
        mask.apply_in_place(&mut x);
        x.copy_pinned_from(&pinned);
    }
    x
}

/// The 1D benchmark: Gaussians of scale 0.06 at 0.2 and 0.8 on `N = 100`,
/// `P = 10`, Greenshields with `v0 = 2` and `ρ̂ = 0.03` per cell.
pub fn benchmark_1d(mode: Mode) -> ProblemSpec {
    let grid = Grid::new(&[100], 10).expect("valid grid");
    let mu = gaussian_1d(0.2, 0.06, &grid).expect("valid Gaussian");
    let nu = gaussian_1d(0.8, 0.06, &grid).expect("valid Gaussian");
    let d = FundamentalDiagram::greenshields(2.0, 0.03).expect("valid diagram");
    let d = to_volume_units(&d, DensityUnits::PerCell, &grid).expect("valid units");
    ProblemSpec::new(grid, mu, nu, DiagramField::Uniform(d)).with_mode(mode)
}

/// The toll-gate run on an `n × n` grid with `steps` time steps: Gaussians of
/// scale 0.07 at (0.5, 0.08) and (0.5, 0.92), Greenshields with `v0 = 2` and
/// `ρ̂ = 0.02` per cell, four gates across the middle rows.
pub fn obstacle_2d(n: usize, steps: usize) -> Result<ProblemSpec> {
    let grid = Grid::new(&[n, n], steps)?;
    let band = (n / 2 - n / 24).max(1)..(n / 2 + n / 24).max(n / 2 + 1);
    let mask = toll_gate_mask(4, (n / 16).max(1), band, &grid)?;
    let mu = mask_marginal(&gaussian_2d([0.5, 0.08], 0.07, &grid)?, &mask, 0, &grid)?;
    let nu = mask_marginal(&gaussian_2d([0.5, 0.92], 0.07, &grid)?, &mask, steps, &grid)?;
    let d = FundamentalDiagram::greenshields(2.0, 0.02)?;
    let d = to_volume_units(&d, DensityUnits::PerCell, &grid)?;
    Ok(ProblemSpec::new(grid, mu, nu, DiagramField::Uniform(d)).with_mask(mask))
}
