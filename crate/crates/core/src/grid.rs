//! Space–time lattice, the discrete continuity operator and its adjoint.
//!
//! Two layouts are supported.
//!
//! *Collocated*: ρ and every momentum component live on `P+1` time nodes times
//! the spatial cells. Slices `k = 0` and `k = P` of ρ hold the marginals. The
//! divergence is evaluated on the `P` time intervals,
//!
//! ```text
//! (Kx)_j = (ρ_{j+1} − ρ_j)/Δt + Σ_ℓ D_ℓ (m_j + m_{j+1})/2,
//! ```
//!
//! where `D_ℓ` is the centered difference with odd reflection at the walls
//! (zero normal momentum). State entries carry trapezoid weights in time.
//!
//! *Staggered*: ρ lives on the half levels `−1/2, 1/2, …, P+1/2` (the outer two
//! are the marginals) and momentum on cell faces at integer times, with zero
//! flux through the boundary faces. The divergence is evaluated on
//! `(P+1) × cells` nodes with forward differences in both time and space.

use ndarray::{s, Array3, ArrayView3, ArrayViewMut3, Axis, Slice, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Placement of the variables on the lattice.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Layout {
    Collocated,
    Staggered,
}

impl Layout {
    pub fn name(self) -> &'static str {
        match self {
            Layout::Collocated => "collocated",
            Layout::Staggered => "staggered",
        }
    }
}

/// Uniform lattice on the unit cube `[0,1]^d × [0,1]`, `d ∈ {1, 2}`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Grid {
    dim: usize,
    cells: [usize; 2],
    steps: usize,
}

impl Grid {
    pub fn new(cells: &[usize], steps: usize) -> Result<Self> {
        if cells.is_empty() || cells.len() > 2 {
            return Err(Error::InvalidGrid(format!(
                "spatial dimension must be 1 or 2, got {}",
                cells.len()
            )));
        }
        if let Some(n) = cells.iter().find(|&&n| n < 2) {
            return Err(Error::InvalidGrid(format!("cell count {n} < 2")));
        }
        if steps < 2 {
            return Err(Error::InvalidGrid(format!("time steps {steps} < 2")));
        }
        let mut c = [1usize; 2];
        c[..cells.len()].copy_from_slice(cells);
        Ok(Self {
            dim: cells.len(),
            cells: c,
            steps,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn cells(&self) -> &[usize] {
        &self.cells[..self.dim]
    }

    /// Number of time steps `P`.
    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.steps as f64
    }

    pub fn dx(&self, axis: usize) -> f64 {
        1.0 / self.cells[axis] as f64
    }

    /// Spatial shape padded to two axes (`n1 = 1` in 1D).
    pub fn spatial_shape(&self) -> (usize, usize) {
        (self.cells[0], self.cells[1])
    }

    pub fn num_cells(&self) -> usize {
        self.cells[0] * self.cells[1]
    }

    pub fn cell_volume(&self) -> f64 {
        self.cells().iter().map(|&n| 1.0 / n as f64).product()
    }

    /// Volume of one space–time cell, `Δt · Π Δx_ℓ`.
    pub fn node_volume(&self) -> f64 {
        self.dt() * self.cell_volume()
    }

    pub fn cell_center(&self, axis: usize, i: usize) -> f64 {
        (i as f64 + 0.5) * self.dx(axis)
    }

    pub fn rho_shape(&self, layout: Layout) -> [usize; 3] {
        let (n0, n1) = self.spatial_shape();
        match layout {
            Layout::Collocated => [self.steps + 1, n0, n1],
            Layout::Staggered => [self.steps + 2, n0, n1],
        }
    }

    pub fn m_shape(&self, layout: Layout, axis: usize) -> [usize; 3] {
        let (n0, n1) = self.spatial_shape();
        match layout {
            Layout::Collocated => [self.steps + 1, n0, n1],
            Layout::Staggered => [self.steps + 1, n0 + usize::from(axis == 0), n1 + usize::from(axis == 1)],
        }
    }

    /// Shape of the divergence nodes (and of the dual variable).
    pub fn node_shape(&self, layout: Layout) -> [usize; 3] {
        let (n0, n1) = self.spatial_shape();
        match layout {
            Layout::Collocated => [self.steps, n0, n1],
            Layout::Staggered => [self.steps + 1, n0, n1],
        }
    }

    pub fn num_nodes(&self, layout: Layout) -> usize {
        self.node_shape(layout).iter().product()
    }

    /// Total number of stored unknowns over ρ and all momentum components.
    pub fn degrees_of_freedom(&self, layout: Layout) -> usize {
        let rho: usize = self.rho_shape(layout).iter().product();
        let m: usize = (0..self.dim)
            .map(|a| self.m_shape(layout, a).iter().product::<usize>())
            .sum();
        rho + m
    }

    /// Time weight of state slice `k` (trapezoid rule in collocated mode).
    pub fn slice_weight(&self, layout: Layout, k: usize) -> f64 {
        match layout {
            Layout::Collocated if k == 0 || k == self.steps => 0.5,
            _ => 1.0,
        }
    }
}

/// Density and momentum over the lattice.
#[derive(Clone, Debug, PartialEq)]
pub struct TransportState {
    pub layout: Layout,
    pub rho: Array3<f64>,
    pub m: Vec<Array3<f64>>,
}

impl TransportState {
    pub fn zeros(grid: &Grid, layout: Layout) -> Self {
        Self {
            layout,
            rho: Array3::zeros(grid.rho_shape(layout)),
            m: (0..grid.dim())
                .map(|a| Array3::zeros(grid.m_shape(layout, a)))
                .collect(),
        }
    }

    pub fn check_shape(&self, grid: &Grid) -> Result<()> {
        check(self.rho.shape(), &grid.rho_shape(self.layout))?;
        if self.m.len() != grid.dim() {
            return Err(Error::ShapeMismatch {
                expected: vec![grid.dim()],
                actual: vec![self.m.len()],
            });
        }
        for (a, m) in self.m.iter().enumerate() {
            check(m.shape(), &grid.m_shape(self.layout, a))?;
        }
        Ok(())
    }

    pub fn expect_layout(&self, layout: Layout) -> Result<()> {
        if self.layout != layout {
            return Err(Error::LayoutMismatch {
                expected: layout.name(),
                actual: self.layout.name(),
            });
        }
        Ok(())
    }

    fn fields(&self) -> impl Iterator<Item = &Array3<f64>> {
        std::iter::once(&self.rho).chain(self.m.iter())
    }

    fn fields_mut(&mut self) -> impl Iterator<Item = &mut Array3<f64>> {
        std::iter::once(&mut self.rho).chain(self.m.iter_mut())
    }

    /// `self ← a·self + b·other`.
    pub fn lincomb(&mut self, a: f64, b: f64, other: &Self) {
        for (x, y) in self.fields_mut().zip(other.fields()) {
            Zip::from(x).and(y).for_each(|x, &y| *x = a * *x + b * y);
        }
    }

    /// `self ← self + b·other`.
    pub fn axpy(&mut self, b: f64, other: &Self) {
        for (x, y) in self.fields_mut().zip(other.fields()) {
            x.scaled_add(b, y);
        }
    }

    pub fn scale(&mut self, a: f64) {
        for x in self.fields_mut() {
            x.mapv_inplace(|v| a * v);
        }
    }

    /// Volume-weighted inner product.
    pub fn dot(&self, other: &Self, grid: &Grid) -> f64 {
        let mut total = 0.0;
        for (x, y) in self.fields().zip(other.fields()) {
            for (k, (xs, ys)) in x.outer_iter().zip(y.outer_iter()).enumerate() {
                let w = grid.slice_weight(self.layout, k);
                total += w * Zip::from(&xs).and(&ys).fold(0.0, |acc, &a, &b| acc + a * b);
            }
        }
        total * grid.node_volume()
    }

    pub fn norm(&self, grid: &Grid) -> f64 {
        self.dot(self, grid).sqrt()
    }

    /// Weighted distance `‖self − other‖`.
    pub fn distance(&self, other: &Self, grid: &Grid) -> f64 {
        let mut total = 0.0;
        for (x, y) in self.fields().zip(other.fields()) {
            for (k, (xs, ys)) in x.outer_iter().zip(y.outer_iter()).enumerate() {
                let w = grid.slice_weight(self.layout, k);
                total += w * Zip::from(&xs).and(&ys).fold(0.0, |acc, &a, &b| acc + (a - b) * (a - b));
            }
        }
        (total * grid.node_volume()).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.fields().all(|f| f.iter().all(|v| v.is_finite()))
    }

    /// Total mass `Σ ρ · cell volume` of every stored density slice.
    pub fn slice_masses(&self, grid: &Grid) -> Vec<f64> {
        let cv = grid.cell_volume();
        self.rho.outer_iter().map(|s| s.sum() * cv).collect()
    }

    /// Zero every entry fixed by the boundary data: the marginal slices of ρ
    /// and, in staggered mode, the wall faces of m.
    pub fn zero_pinned(&mut self) {
        let last = self.rho.len_of(Axis(0)) - 1;
        self.rho.index_axis_mut(Axis(0), 0).fill(0.0);
        self.rho.index_axis_mut(Axis(0), last).fill(0.0);
        if self.layout == Layout::Staggered {
            for (a, m) in self.m.iter_mut().enumerate() {
                let n = m.len_of(Axis(a + 1));
                m.index_axis_mut(Axis(a + 1), 0).fill(0.0);
                m.index_axis_mut(Axis(a + 1), n - 1).fill(0.0);
            }
        }
    }

    /// Copy the pinned entries (see [`zero_pinned`](Self::zero_pinned)) from `other`.
    pub fn copy_pinned_from(&mut self, other: &Self) {
        let last = self.rho.len_of(Axis(0)) - 1;
        for k in [0, last] {
            self.rho
                .index_axis_mut(Axis(0), k)
                .assign(&other.rho.index_axis(Axis(0), k));
        }
        if self.layout == Layout::Staggered {
            for (a, (m, o)) in self.m.iter_mut().zip(&other.m).enumerate() {
                let n = m.len_of(Axis(a + 1));
                for f in [0, n - 1] {
                    m.index_axis_mut(Axis(a + 1), f).assign(&o.index_axis(Axis(a + 1), f));
                }
            }
        }
    }
}

/// Dual variable over the divergence nodes.
#[derive(Clone, Debug, PartialEq)]
pub struct DualField {
    pub phi: Array3<f64>,
}

impl DualField {
    pub fn zeros(grid: &Grid, layout: Layout) -> Self {
        Self {
            phi: Array3::zeros(grid.node_shape(layout)),
        }
    }

    pub fn check_shape(&self, grid: &Grid, layout: Layout) -> Result<()> {
        check(self.phi.shape(), &grid.node_shape(layout))
    }
}

/// Weighted inner product of two node fields.
pub fn node_dot(a: &Array3<f64>, b: &Array3<f64>, grid: &Grid) -> f64 {
    Zip::from(a).and(b).fold(0.0, |acc, &x, &y| acc + x * y) * grid.node_volume()
}

pub fn node_norm(a: &Array3<f64>, grid: &Grid) -> f64 {
    node_dot(a, a, grid).sqrt()
}

fn check(actual: &[usize], expected: &[usize]) -> Result<()> {
    if actual != expected {
        return Err(Error::ShapeMismatch {
            expected: expected.to_vec(),
            actual: actual.to_vec(),
        });
    }
    Ok(())
}

/// `out += c · D u` along `axis`, where `(D u)_i = u_{i+1} − u_{i−1}` with
/// odd reflection `u_{−1} = −u_0`, `u_N = −u_{N−1}`.
fn add_centered(u: ArrayView3<f64>, mut out: ArrayViewMut3<f64>, axis: usize, c: f64) {
    let ax = Axis(axis);
    let n = u.len_of(ax);
    Zip::from(out.slice_axis_mut(ax, Slice::from(1..n - 1)))
        .and(u.slice_axis(ax, Slice::from(2..n)))
        .and(u.slice_axis(ax, Slice::from(0..n - 2)))
        .for_each(|o, &p, &q| *o += c * (p - q));
    Zip::from(out.index_axis_mut(ax, 0))
        .and(u.index_axis(ax, 1))
        .and(u.index_axis(ax, 0))
        .for_each(|o, &p, &q| *o += c * (p + q));
    Zip::from(out.index_axis_mut(ax, n - 1))
        .and(u.index_axis(ax, n - 1))
        .and(u.index_axis(ax, n - 2))
        .for_each(|o, &p, &q| *o -= c * (p + q));
}

/// `out += c · Dᵀ v` for the operator of [`add_centered`]; equals the negative
/// centered difference with even reflection.
fn add_centered_t(v: ArrayView3<f64>, mut out: ArrayViewMut3<f64>, axis: usize, c: f64) {
    let ax = Axis(axis);
    let n = v.len_of(ax);
    Zip::from(out.slice_axis_mut(ax, Slice::from(1..n - 1)))
        .and(v.slice_axis(ax, Slice::from(0..n - 2)))
        .and(v.slice_axis(ax, Slice::from(2..n)))
        .for_each(|o, &p, &q| *o += c * (p - q));
    for (i, (lo, hi)) in [(0, (0, 1)), (n - 1, (n - 2, n - 1))] {
        Zip::from(out.index_axis_mut(ax, i))
            .and(v.index_axis(ax, lo))
            .and(v.index_axis(ax, hi))
            .for_each(|o, &p, &q| *o += c * (p - q));
    }
}

/// Discrete space–time divergence `K(ρ, m)`, consuming the stored marginal slices.
pub fn divergence(state: &TransportState, grid: &Grid) -> Result<Array3<f64>> {
    state.check_shape(grid)?;
    let p = grid.steps();
    let dt = grid.dt();
    let mut out = Array3::zeros(grid.node_shape(state.layout));
    match state.layout {
        Layout::Collocated => {
            Zip::from(&mut out)
                .and(state.rho.slice(s![1.., .., ..]))
                .and(state.rho.slice(s![..p, .., ..]))
                .for_each(|o, &a, &b| *o = (a - b) / dt);
            for (a, m) in state.m.iter().enumerate() {
                let c = 0.25 / grid.dx(a);
                add_centered(m.slice(s![..p, .., ..]), out.view_mut(), a + 1, c);
                add_centered(m.slice(s![1.., .., ..]), out.view_mut(), a + 1, c);
            }
        }
        Layout::Staggered => {
            Zip::from(&mut out)
                .and(state.rho.slice(s![1.., .., ..]))
                .and(state.rho.slice(s![..p + 1, .., ..]))
                .for_each(|o, &a, &b| *o = (a - b) / dt);
            for (a, m) in state.m.iter().enumerate() {
                let inv = 1.0 / grid.dx(a);
                let ax = Axis(a + 1);
                let n = m.len_of(ax);
                Zip::from(&mut out)
                    .and(m.slice_axis(ax, Slice::from(1..n)))
                    .and(m.slice_axis(ax, Slice::from(0..n - 1)))
                    .for_each(|o, &hi, &lo| *o += (hi - lo) * inv);
            }
        }
    }
    Ok(out)
}

/// Adjoint `K*φ` of [`divergence`] in the volume-weighted inner products.
pub fn adjoint_divergence(phi: &DualField, grid: &Grid, layout: Layout) -> Result<TransportState> {
    phi.check_shape(grid, layout)?;
    Ok(adjoint_divergence_view(phi.phi.view(), grid, layout))
}

fn adjoint_divergence_view(phi: ArrayView3<f64>, grid: &Grid, layout: Layout) -> TransportState {
    let phi = &phi;
    let p = grid.steps();
    let dt = grid.dt();
    let mut out = TransportState::zeros(grid, layout);
    match layout {
        Layout::Collocated => {
            // psum_k = φ_{k−1} + φ_k, with φ_{−1} = φ_P = 0
            let mut psum = Array3::<f64>::zeros(grid.rho_shape(layout));
            psum.slice_mut(s![..p, .., ..]).assign(phi);
            psum.slice_mut(s![1.., .., ..]).scaled_add(1.0, phi);
            {
                let rho = &mut out.rho;
                rho.slice_mut(s![1.., .., ..]).scaled_add(1.0 / dt, phi);
                rho.slice_mut(s![..p, .., ..]).scaled_add(-1.0 / dt, phi);
            }
            for (a, m) in out.m.iter_mut().enumerate() {
                add_centered_t(psum.view(), m.view_mut(), a + 1, 0.25 / grid.dx(a));
            }
            for k in [0, p] {
                let w = grid.slice_weight(layout, k);
                out.rho.index_axis_mut(Axis(0), k).mapv_inplace(|v| v / w);
                for m in out.m.iter_mut() {
                    m.index_axis_mut(Axis(0), k).mapv_inplace(|v| v / w);
                }
            }
        }
        Layout::Staggered => {
            out.rho.slice_mut(s![1.., .., ..]).scaled_add(1.0 / dt, phi);
            out.rho.slice_mut(s![..p + 1, .., ..]).scaled_add(-1.0 / dt, phi);
            for (a, m) in out.m.iter_mut().enumerate() {
                let inv = 1.0 / grid.dx(a);
                let ax = Axis(a + 1);
                let n = m.len_of(ax);
                m.slice_axis_mut(ax, Slice::from(1..n)).scaled_add(inv, phi);
                m.slice_axis_mut(ax, Slice::from(0..n - 1)).scaled_add(-inv, phi);
            }
        }
    }
    out
}

/// Divergence restricted to the free unknowns: pinned entries are treated as zero.
pub fn free_divergence(state: &TransportState, grid: &Grid) -> Result<Array3<f64>> {
    let mut free = state.clone();
    free.zero_pinned();
    divergence(&free, grid)
}

/// Adjoint of [`free_divergence`]: `K*φ` with pinned entries zeroed.
pub fn free_adjoint(phi: &DualField, grid: &Grid, layout: Layout) -> Result<TransportState> {
    phi.check_shape(grid, layout)?;
    free_adjoint_view(phi.phi.view(), grid, layout)
}

/// [`free_adjoint`] on a borrowed node field.
pub(crate) fn free_adjoint_view(phi: ArrayView3<f64>, grid: &Grid, layout: Layout) -> Result<TransportState> {
    let shape = grid.node_shape(layout);
    if phi.shape() != shape {
        return Err(Error::ShapeMismatch {
            expected: shape.to_vec(),
            actual: phi.shape().to_vec(),
        });
    }
    let mut out = adjoint_divergence_view(phi, grid, layout);
    out.zero_pinned();
    Ok(out)
}

/// Centered (collocated) view of a staggered state: densities averaged over
/// adjacent half levels and momenta over the two faces of each cell.
pub fn midpoint_average(state: &TransportState, grid: &Grid) -> Result<TransportState> {
    state.expect_layout(Layout::Staggered)?;
    state.check_shape(grid)?;
    let p = grid.steps();
    let mut out = TransportState::zeros(grid, Layout::Collocated);
    Zip::from(&mut out.rho)
        .and(state.rho.slice(s![..p + 1, .., ..]))
        .and(state.rho.slice(s![1.., .., ..]))
        .for_each(|o, &a, &b| *o = 0.5 * (a + b));
    for (a, (mc, ms)) in out.m.iter_mut().zip(&state.m).enumerate() {
        let ax = Axis(a + 1);
        let n = ms.len_of(ax);
        Zip::from(mc)
            .and(ms.slice_axis(ax, Slice::from(0..n - 1)))
            .and(ms.slice_axis(ax, Slice::from(1..n)))
            .for_each(|o, &lo, &hi| *o = 0.5 * (lo + hi));
    }
    Ok(out)
}

/// Euclidean transpose of [`midpoint_average`].
pub fn midpoint_average_transpose(centered: &TransportState, grid: &Grid) -> Result<TransportState> {
    centered.expect_layout(Layout::Collocated)?;
    centered.check_shape(grid)?;
    let p = grid.steps();
    let mut out = TransportState::zeros(grid, Layout::Staggered);
    out.rho.slice_mut(s![..p + 1, .., ..]).scaled_add(0.5, &centered.rho);
    out.rho.slice_mut(s![1.., .., ..]).scaled_add(0.5, &centered.rho);
    for (a, (ms, mc)) in out.m.iter_mut().zip(&centered.m).enumerate() {
        let ax = Axis(a + 1);
        let n = ms.len_of(ax);
        ms.slice_axis_mut(ax, Slice::from(0..n - 1)).scaled_add(0.5, mc);
        ms.slice_axis_mut(ax, Slice::from(1..n)).scaled_add(0.5, mc);
    }
    Ok(out)
}

const NORM_SEED: u64 = 0x5eed;

/// Power-iteration estimate of `‖K‖` on the free unknowns, inflated by 1%.
pub fn estimate_operator_norm(grid: &Grid, layout: Layout, iters: usize) -> f64 {
    estimate_operator_norm_seeded(grid, layout, iters, NORM_SEED)
}

pub fn estimate_operator_norm_seeded(grid: &Grid, layout: Layout, iters: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = TransportState::zeros(grid, layout);
    for f in std::iter::once(&mut x.rho).chain(x.m.iter_mut()) {
        f.mapv_inplace(|_| rng.random_range(-1.0..1.0));
    }
    x.zero_pinned();
    let mut best = 0.0f64;
    for _ in 0..iters.max(1) {
        let kx = free_divergence(&x, grid).expect("shape built from grid");
        let y = free_adjoint(&DualField { phi: kx }, grid, layout).expect("shape built from grid");
        let xx = x.dot(&x, grid);
        if xx == 0.0 {
            break;
        }
        best = best.max(x.dot(&y, grid) / xx);
        let ny = y.norm(grid);
        if ny == 0.0 {
            break;
        }
        x = y;
        x.scale(1.0 / ny);
    }
    1.01 * best.sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_state(grid: &Grid, layout: Layout, rng: &mut ChaCha8Rng) -> TransportState {
        let mut x = TransportState::zeros(grid, layout);
        for f in std::iter::once(&mut x.rho).chain(x.m.iter_mut()) {
            f.mapv_inplace(|_| rng.random_range(-1.0..1.0));
        }
        x
    }

    fn random_dual(grid: &Grid, layout: Layout, rng: &mut ChaCha8Rng) -> DualField {
        let mut phi = DualField::zeros(grid, layout);
        phi.phi.mapv_inplace(|_| rng.random_range(-1.0..1.0));
        phi
    }

    #[test]
    fn grid_rejects_degenerate_sizes() {
        assert!(Grid::new(&[1], 4).is_err());
        assert!(Grid::new(&[4], 1).is_err());
        assert!(Grid::new(&[], 4).is_err());
        assert!(Grid::new(&[2, 2, 2], 4).is_err());
        let g = Grid::new(&[4, 8], 3).unwrap();
        assert_eq!(g.degrees_of_freedom(Layout::Collocated), 3 * 4 * 32);
        assert_eq!(g.degrees_of_freedom(Layout::Staggered), 5 * 32 + 4 * 40 + 4 * 36);
        assert!((g.dx(1) * 8.0 - 1.0).abs() < 1e-15);
    }

    #[test]
    fn constant_density_has_zero_divergence() {
        for layout in [Layout::Collocated, Layout::Staggered] {
            let g = Grid::new(&[5, 3], 4).unwrap();
            let mut x = TransportState::zeros(&g, layout);
            x.rho.fill(0.7);
            let k = divergence(&x, &g).unwrap();
            assert!(k.iter().all(|v| v.abs() < 1e-14));
        }
    }

    #[test]
    fn constant_momentum_is_divergence_free_in_the_interior() {
        let g = Grid::new(&[6], 3).unwrap();
        let mut x = TransportState::zeros(&g, Layout::Collocated);
        x.m[0].fill(1.0);
        let k = divergence(&x, &g).unwrap();
        for j in 0..3 {
            for i in 1..5 {
                assert!(k[[j, i, 0]].abs() < 1e-14);
            }
            assert!(k[[j, 0, 0]] > 0.0 && k[[j, 5, 0]] < 0.0);
        }
    }

    #[test]
    fn collocated_stencil_by_hand() {
        // 4 cells, 3 steps: dt = 1/3, dx = 1/4
        let g = Grid::new(&[4], 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random_state(&g, Layout::Collocated, &mut rng);
        let k = divergence(&x, &g).unwrap();
        let r = |t: usize, i: usize| x.rho[[t, i, 0]];
        let m = |t: usize, i: isize| -> f64 {
            if i < 0 {
                -x.m[0][[t, 0, 0]]
            } else if i > 3 {
                -x.m[0][[t, 3, 0]]
            } else {
                x.m[0][[t, i as usize, 0]]
            }
        };
        for j in 0..3 {
            for i in 0..4 {
                let ii = i as isize;
                let mbar = |q: isize| 0.5 * (m(j, q) + m(j + 1, q));
                let want = 3.0 * (r(j + 1, i) - r(j, i)) + 2.0 * (mbar(ii + 1) - mbar(ii - 1));
                assert!((k[[j, i, 0]] - want).abs() < 1e-12, "node ({j},{i})");
            }
        }
    }

    #[test]
    fn staggered_stencil_by_hand() {
        let g = Grid::new(&[4], 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random_state(&g, Layout::Staggered, &mut rng);
        let k = divergence(&x, &g).unwrap();
        for j in 0..4 {
            for i in 0..4 {
                let want =
                    3.0 * (x.rho[[j + 1, i, 0]] - x.rho[[j, i, 0]]) + 4.0 * (x.m[0][[j, i + 1, 0]] - x.m[0][[j, i, 0]]);
                assert!((k[[j, i, 0]] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn adjoint_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for layout in [Layout::Collocated, Layout::Staggered] {
            for cells in [vec![4], vec![4, 3], vec![2, 5]] {
                let g = Grid::new(&cells, 3).unwrap();
                for _ in 0..20 {
                    let x = random_state(&g, layout, &mut rng);
                    let phi = random_dual(&g, layout, &mut rng);
                    let lhs = node_dot(&divergence(&x, &g).unwrap(), &phi.phi, &g);
                    let rhs = x.dot(&adjoint_divergence(&phi, &g, layout).unwrap(), &g);
                    assert!((lhs - rhs).abs() <= 1e-12 * (lhs.abs() + 1.0), "{layout:?} {cells:?}");
                }
            }
        }
    }

    #[test]
    fn adjoint_of_constant_vanishes_in_the_interior() {
        let g = Grid::new(&[5], 4).unwrap();
        let mut phi = DualField::zeros(&g, Layout::Collocated);
        phi.phi.fill(2.0);
        let y = adjoint_divergence(&phi, &g, Layout::Collocated).unwrap();
        for k in 1..4 {
            for i in 0..5 {
                assert!(y.rho[[k, i, 0]].abs() < 1e-13);
                assert!(y.m[0][[k, i, 0]].abs() < 1e-13);
            }
        }
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let g = Grid::new(&[4], 3).unwrap();
        let h = Grid::new(&[5], 3).unwrap();
        let x = TransportState::zeros(&h, Layout::Collocated);
        assert!(matches!(divergence(&x, &g), Err(Error::ShapeMismatch { .. })));
        let phi = DualField::zeros(&h, Layout::Collocated);
        assert!(adjoint_divergence(&phi, &g, Layout::Collocated).is_err());
    }

    #[test]
    fn midpoint_average_by_hand() {
        let g = Grid::new(&[3], 2).unwrap();
        let mut x = TransportState::zeros(&g, Layout::Staggered);
        x.m[0][[1, 1, 0]] = 0.0;
        x.m[0][[1, 2, 0]] = 2.0;
        x.rho[[2, 0, 0]] = 4.0;
        let c = midpoint_average(&x, &g).unwrap();
        assert_eq!(c.m[0][[1, 1, 0]], 1.0);
        assert_eq!(c.rho[[1, 0, 0]], 2.0);
        assert_eq!(c.rho[[2, 0, 0]], 2.0);

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random_state(&g, Layout::Staggered, &mut rng);
        let c = midpoint_average(&x, &g).unwrap();
        for k in 0..3 {
            for i in 0..3 {
                let r = 0.5 * (x.rho[[k, i, 0]] + x.rho[[k + 1, i, 0]]);
                let m = 0.5 * (x.m[0][[k, i, 0]] + x.m[0][[k, i + 1, 0]]);
                assert!((c.rho[[k, i, 0]] - r).abs() < 1e-15);
                assert!((c.m[0][[k, i, 0]] - m).abs() < 1e-15);
            }
        }
        assert!(midpoint_average(&c, &g).is_err());
    }

    #[test]
    fn midpoint_transpose_is_the_transpose() {
        let g = Grid::new(&[3, 4], 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let flat = |s: &TransportState, t: &TransportState| -> f64 {
            let mut acc = (&s.rho * &t.rho).sum();
            for (a, b) in s.m.iter().zip(&t.m) {
                acc += (a * b).sum();
            }
            acc
        };
        for _ in 0..10 {
            let x = random_state(&g, Layout::Staggered, &mut rng);
            let c = random_state(&g, Layout::Collocated, &mut rng);
            let ax = midpoint_average(&x, &g).unwrap();
            let atc = midpoint_average_transpose(&c, &g).unwrap();
            assert!((flat(&ax, &c) - flat(&x, &atc)).abs() < 1e-12);
            // AᵀA is positive semidefinite
            let ata = midpoint_average_transpose(&ax, &g).unwrap();
            assert!(flat(&x, &ata) >= 0.0);
        }
    }

    #[test]
    fn operator_norm_is_monotone_in_iterations_and_grid() {
        let g = Grid::new(&[8], 4).unwrap();
        let mut prev = 0.0;
        for iters in [1, 2, 4, 8, 16, 32] {
            let e = estimate_operator_norm(&g, Layout::Collocated, iters);
            assert!(e >= prev);
            prev = e;
        }
        let coarse = estimate_operator_norm(&Grid::new(&[4], 4).unwrap(), Layout::Collocated, 50);
        let fine = estimate_operator_norm(&Grid::new(&[8], 8).unwrap(), Layout::Collocated, 50);
        assert!(fine > coarse);
    }
}
