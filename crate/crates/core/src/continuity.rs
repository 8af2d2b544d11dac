//! Projection onto the affine continuity set `C = {x : K_f x = y}`.
//!
//! `K_f` is the divergence restricted to the free unknowns and `y` collects
//! the contribution of the marginal slices. The projection is
//! `x − K_f*φ` with `(K_f K_f*) φ = K_f x − y`.
//!
//! In both layouts `K_f K_f*` is diagonalized by a type-II cosine transform in
//! time and along each spatial axis, which gives the spectral backend. The
//! conjugate-gradient backend applies the operator matrix-free and can also
//! keep blocked cells at zero, which makes it the exact projection onto
//! `C ∩ {x : x = 0 on obstacles}`.

use std::f64::consts::PI;
use std::sync::Arc;

use ndarray::{Array1, Array3, ArrayViewMut1, Axis, Zip};
use rustdct::{DctPlanner, TransformType2And3};

use crate::error::{Error, Result};
use crate::grid::{
    divergence, free_adjoint, free_adjoint_view, free_divergence, node_norm, DualField, Grid, Layout, TransportState,
};
use crate::prox::ObstacleMask;

/// Relative tolerance on the mean of a Poisson source.
const MEAN_TOL: f64 = 1e-10;
/// Relative residual target of the CG backend.
const CG_TOL: f64 = 1e-11;

/// Marginal contribution to the continuity constraint.
#[derive(Clone, Debug, PartialEq)]
pub struct ContinuityRhs {
    pub layout: Layout,
    pub y: Array3<f64>,
}

impl ContinuityRhs {
    /// `y = −K(x_pinned)` where `x_pinned` holds only the marginals.
    pub fn from_marginals(
        grid: &Grid,
        layout: Layout,
        mu: &ndarray::Array2<f64>,
        nu: &ndarray::Array2<f64>,
    ) -> Result<Self> {
        let mut x = TransportState::zeros(grid, layout);
        let last = x.rho.len_of(Axis(0)) - 1;
        let spatial = [grid.spatial_shape().0, grid.spatial_shape().1];
        for f in [mu, nu] {
            if f.shape() != spatial {
                return Err(Error::ShapeMismatch {
                    expected: spatial.to_vec(),
                    actual: f.shape().to_vec(),
                });
            }
        }
        x.rho.index_axis_mut(Axis(0), 0).assign(mu);
        x.rho.index_axis_mut(Axis(0), last).assign(nu);
        let y = -divergence(&x, grid)?;
        let total: f64 = y.sum();
        let scale: f64 = y.iter().map(|v| v.abs()).sum();
        if total.abs() > 1e-12 * scale.max(f64::MIN_POSITIVE) {
            return Err(Error::IncompatibleRhs {
                mean: total / y.len() as f64,
                tolerance: 1e-12 * scale / y.len() as f64,
            });
        }
        Ok(Self { layout, y })
    }

    pub fn zeros(grid: &Grid, layout: Layout) -> Self {
        Self {
            layout,
            y: Array3::zeros(grid.node_shape(layout)),
        }
    }
}

/// Source `K_f x − y` of the projection.
pub fn continuity_source(state: &TransportState, rhs: &ContinuityRhs, grid: &Grid) -> Result<Array3<f64>> {
    state.expect_layout(rhs.layout)?;
    let mut r = free_divergence(state, grid)?;
    if r.shape() != rhs.y.shape() {
        return Err(Error::ShapeMismatch {
            expected: r.shape().to_vec(),
            actual: rhs.y.shape().to_vec(),
        });
    }
    r -= &rhs.y;
    Ok(r)
}

/// `‖K_f x − y‖` in the volume-weighted norm.
pub fn continuity_residual(state: &TransportState, rhs: &ContinuityRhs, grid: &Grid) -> Result<f64> {
    Ok(node_norm(&continuity_source(state, rhs, grid)?, grid))
}

/// Subtract the mean of `r` if it is within round-off of zero.
fn remove_mean(r: &mut Array3<f64>) -> Result<()> {
    remove_mean_scaled(r, 0.0)
}

/// Like [`remove_mean`], with `extra` added to the scale the mean is
/// compared against (a source may be far smaller than the terms it came from).
fn remove_mean_scaled(r: &mut Array3<f64>, extra: f64) -> Result<()> {
    let n = r.len() as f64;
    let total = r.sum();
    let scale: f64 = r.iter().map(|v| v.abs()).sum::<f64>() + extra;
    if total.abs() > MEAN_TOL * scale {
        return Err(Error::IncompatibleRhs {
            mean: total / n,
            tolerance: MEAN_TOL * scale / n,
        });
    }
    let mean = total / n;
    r.mapv_inplace(|v| v - mean);
    Ok(())
}

/// Eigenvalues of `K_f K_f*` on the cosine basis, indexed like the nodes.
pub fn poisson_eigenvalues(grid: &Grid, layout: Layout) -> Array3<f64> {
    let shape = grid.node_shape(layout);
    let dt = grid.dt();
    let t_len = shape[0] as f64;
    let space = |axis: usize, j: usize| -> f64 {
        let n = grid.spatial_shape_axis(axis) as f64;
        let h = grid.dx(axis);
        match layout {
            Layout::Collocated => (PI * j as f64 / n).sin().powi(2) / (h * h),
            Layout::Staggered => 4.0 * (0.5 * PI * j as f64 / n).sin().powi(2) / (h * h),
        }
    };
    let dim = grid.dim();
    Array3::from_shape_fn(shape, |(q, i, j)| {
        let theta = 0.5 * PI * q as f64 / t_len;
        let time = 4.0 * theta.sin().powi(2) / (dt * dt);
        let mut s = space(0, i);
        if dim == 2 {
            s += space(1, j);
        }
        match layout {
            Layout::Collocated => time + theta.cos().powi(2) * s,
            Layout::Staggered => time + s,
        }
    })
}

/// Exact `‖K_f‖`, the square root of the largest eigenvalue of `K_f K_f*`.
pub fn spectral_operator_norm(grid: &Grid, layout: Layout) -> f64 {
    poisson_eigenvalues(grid, layout)
        .iter()
        .fold(0.0f64, |a, &b| a.max(b))
        .sqrt()
}

impl Grid {
    pub(crate) fn spatial_shape_axis(&self, axis: usize) -> usize {
        let (n0, n1) = self.spatial_shape();
        if axis == 0 {
            n0
        } else {
            n1
        }
    }
}

/// Spectral solver for `K_f K_f* φ = r`.
pub struct SpectralPoisson {
    layout: Layout,
    eig: Array3<f64>,
    plans: Vec<Option<Arc<dyn TransformType2And3<f64>>>>,
}

impl SpectralPoisson {
    pub fn new(grid: &Grid, layout: Layout) -> Self {
        let eig = poisson_eigenvalues(grid, layout);
        let mut planner = DctPlanner::new();
        let plans = eig
            .shape()
            .iter()
            .map(|&n| (n > 1).then(|| planner.plan_dct2(n)))
            .collect();
        Self { layout, eig, plans }
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    fn transform(&self, x: &mut Array3<f64>, inverse: bool) {
        for (axis, plan) in self.plans.iter().enumerate() {
            let Some(plan) = plan else { continue };
            let n = x.len_of(Axis(axis));
            let mut buf = vec![0.0; n];
            let mut scratch = vec![0.0; plan.get_scratch_len()];
            let scale = 2.0 / n as f64;
            for mut lane in x.lanes_mut(Axis(axis)) {
                buf.iter_mut().zip(lane.iter()).for_each(|(b, &v)| *b = v);
                if inverse {
                    plan.process_dct3_with_scratch(&mut buf, &mut scratch);
                    write_lane(&mut lane, &buf, scale);
                } else {
                    plan.process_dct2_with_scratch(&mut buf, &mut scratch);
                    write_lane(&mut lane, &buf, 1.0);
                }
            }
        }
    }

    /// Zero-mean solution of `K_f K_f* φ = r`. The mean of `r` must vanish up
    /// to round-off; it is removed before solving.
    pub fn solve(&self, rhs: &Array3<f64>) -> Result<DualField> {
        if rhs.shape() != self.eig.shape() {
            return Err(Error::ShapeMismatch {
                expected: self.eig.shape().to_vec(),
                actual: rhs.shape().to_vec(),
            });
        }
        let mut x = rhs.clone();
        remove_mean(&mut x)?;
        self.transform(&mut x, false);
        Zip::from(&mut x).and(&self.eig).for_each(|v, &l| {
            *v = if l > 0.0 { *v / l } else { 0.0 };
        });
        x[[0, 0, 0]] = 0.0;
        self.transform(&mut x, true);
        let mean = x.mean().unwrap_or(0.0);
        x.mapv_inplace(|v| v - mean);
        Ok(DualField { phi: x })
    }
}

fn write_lane(lane: &mut ArrayViewMut1<f64>, buf: &[f64], scale: f64) {
    lane.iter_mut().zip(buf).for_each(|(l, &b)| *l = scale * b);
}

/// Matrix-free `K_f W K_f*`. `W` zeroes blocked entries when a mask is set
/// and scales entries by a positive weight field when one is given.
pub struct PoissonOperator {
    grid: Grid,
    layout: Layout,
    mask: Option<ObstacleMask>,
    weights: Option<TransportState>,
}

impl PoissonOperator {
    pub fn new(grid: &Grid, layout: Layout, mask: Option<ObstacleMask>) -> Self {
        Self {
            grid: grid.clone(),
            layout,
            mask,
            weights: None,
        }
    }

    /// Operator with entrywise positive weights on the state.
    pub fn weighted(grid: &Grid, weights: TransportState, mask: Option<ObstacleMask>) -> Result<Self> {
        weights.check_shape(grid)?;
        if weights
            .rho
            .iter()
            .chain(weights.m.iter().flatten())
            .any(|w| !(w.is_finite() && *w > 0.0))
        {
            return Err(Error::InvalidParameter("weights must be positive and finite".into()));
        }
        Ok(Self {
            grid: grid.clone(),
            layout: weights.layout,
            mask,
            weights: Some(weights),
        })
    }

    fn scale(&self, x: &mut TransportState) {
        if let Some(w) = &self.weights {
            x.rho *= &w.rho;
            for (m, wm) in x.m.iter_mut().zip(&w.m) {
                *m *= wm;
            }
        }
        if let Some(mask) = &self.mask {
            mask.apply_in_place(x);
        }
    }

    pub fn apply(&self, phi: &Array3<f64>) -> Array3<f64> {
        let mut x = free_adjoint_view(phi.view(), &self.grid, self.layout).expect("node field shaped by the grid");
        self.scale(&mut x);
        // pinned entries of `x` are already zero
        divergence(&x, &self.grid).expect("state shaped by the grid")
    }

    /// Correction `W K_f* φ` that goes with a solution `φ`.
    pub fn correction(&self, phi: &DualField) -> Result<TransportState> {
        let mut x = free_adjoint(phi, &self.grid, self.layout)?;
        self.scale(&mut x);
        Ok(x)
    }

    /// Operator diagonal, used as a Jacobi preconditioner. Closed form for
    /// the plain operator; otherwise probed with node colorings, which is
    /// exact because nodes sharing a color never couple.
    pub fn diagonal(&self) -> Array3<f64> {
        if self.mask.is_none() && self.weights.is_none() {
            return self.plain_diagonal();
        }
        let shape = self.grid.node_shape(self.layout);
        let period = |n: usize, p: usize| p.min(n);
        let (pt, p0, p1) = (period(shape[0], 3), period(shape[1], 5), period(shape[2], 5));
        let mut diag = Array3::zeros(shape);
        for ct in 0..pt {
            for c0 in 0..p0 {
                for c1 in 0..p1 {
                    let color = |k: usize, i: usize, j: usize| k % pt == ct && i % p0 == c0 && j % p1 == c1;
                    let v = Array3::from_shape_fn(shape, |(k, i, j)| f64::from(u8::from(color(k, i, j))));
                    let av = self.apply(&v);
                    Zip::indexed(&mut diag).and(&av).for_each(|(k, i, j), d, &a| {
                        if color(k, i, j) {
                            *d = a;
                        }
                    });
                }
            }
        }
        diag
    }

    fn plain_diagonal(&self) -> Array3<f64> {
        let g = &self.grid;
        let p = g.steps();
        let dt2 = g.dt() * g.dt();
        let shape = g.node_shape(self.layout);
        let dim = g.dim();
        let (n0, n1) = g.spatial_shape();
        let lens = [n0, n1];
        Array3::from_shape_fn(shape, |(k, i, j)| {
            let idx = [i, j];
            match self.layout {
                Layout::Collocated => {
                    // free density slices are 1..P−1; node k couples slices k and k+1
                    let time = (usize::from(k >= 1) + usize::from(k < p - 1)) as f64 / dt2;
                    let w = |s: usize| g.slice_weight(Layout::Collocated, s);
                    let avg = 0.25 * (1.0 / w(k) + 1.0 / w(k + 1));
                    let space: f64 = (0..dim).map(|a| 0.5 / (g.dx(a) * g.dx(a))).sum();
                    time + avg * space
                }
                Layout::Staggered => {
                    let time = (usize::from(k >= 1) + usize::from(k < p)) as f64 / dt2;
                    let space: f64 = (0..dim)
                        .map(|a| {
                            let faces = usize::from(idx[a] >= 1) + usize::from(idx[a] + 1 < lens[a]);
                            faces as f64 / (g.dx(a) * g.dx(a))
                        })
                        .sum();
                    time + space
                }
            }
        })
    }

    /// Preconditioned CG from `x0`. Without a mask the solution is the
    /// zero-mean representative.
    pub fn solve_cg(&self, rhs: &Array3<f64>, x0: Option<&Array3<f64>>) -> Result<DualField> {
        let mut b = rhs.clone();
        if self.mask.is_none() {
            remove_mean(&mut b)?;
        }
        let bnorm = b.iter().map(|v| v * v).sum::<f64>().sqrt();
        self.cg(b, x0, CG_TOL * bnorm)
    }

    /// CG stopped at the absolute Euclidean residual `atol`. The source must
    /// already be compatible.
    pub fn solve_cg_to(&self, rhs: &Array3<f64>, x0: Option<&Array3<f64>>, atol: f64) -> Result<DualField> {
        self.cg(rhs.clone(), x0, atol)
    }

    fn cg(&self, b: Array3<f64>, x0: Option<&Array3<f64>>, atol: f64) -> Result<DualField> {
        let bnorm = b.iter().map(|v| v * v).sum::<f64>().sqrt();
        let mut x = match x0 {
            Some(x0) if x0.shape() == b.shape() => x0.clone(),
            _ => Array3::zeros(b.raw_dim()),
        };
        if bnorm == 0.0 {
            return Ok(DualField {
                phi: Array3::zeros(b.raw_dim()),
            });
        }
        let inv_diag = self.diagonal().mapv(|d| if d > 0.0 { 1.0 / d } else { 1.0 });
        let mut r = &b - &self.apply(&x);
        let cap = 10 * b.len();
        let dot = |a: &Array3<f64>, c: &Array3<f64>| Zip::from(a).and(c).fold(0.0, |s, &u, &v| s + u * v);
        let mut z = &r * &inv_diag;
        let mut p = z.clone();
        let mut rz = dot(&r, &z);
        let mut iters = 0;
        let mut rnorm = dot(&r, &r).sqrt();
        while rnorm > atol {
            if iters >= cap {
                return Err(Error::NotConverged {
                    iterations: iters,
                    residual: rnorm / bnorm,
                });
            }
            let ap = self.apply(&p);
            let pap = dot(&p, &ap);
            if pap <= 0.0 {
                break;
            }
            let alpha = rz / pap;
            x.scaled_add(alpha, &p);
            r.scaled_add(-alpha, &ap);
            Zip::from(&mut z)
                .and(&r)
                .and(&inv_diag)
                .for_each(|z, &r, &d| *z = r * d);
            let rz_new = dot(&r, &z);
            let beta = rz_new / rz;
            rz = rz_new;
            Zip::from(&mut p).and(&z).for_each(|p, &z| *p = z + beta * *p);
            rnorm = dot(&r, &r).sqrt();
            iters += 1;
        }
        if self.mask.is_none() {
            let mean = x.mean().unwrap_or(0.0);
            x.mapv_inplace(|v| v - mean);
        }
        Ok(DualField { phi: x })
    }
}

/// Spectral solve of `K_f K_f* φ = r`.
pub fn solve_poisson(rhs: &Array3<f64>, grid: &Grid, layout: Layout) -> Result<DualField> {
    SpectralPoisson::new(grid, layout).solve(rhs)
}

/// Conjugate-gradient solve of `K_f K_f* φ = r`.
pub fn solve_poisson_cg(rhs: &Array3<f64>, grid: &Grid, layout: Layout) -> Result<DualField> {
    PoissonOperator::new(grid, layout, None).solve_cg(rhs, None)
}

/// Euclidean projection onto `{x : K_f x = y}`; pinned entries are untouched.
pub fn project_continuity(state: &TransportState, rhs: &ContinuityRhs, grid: &Grid) -> Result<TransportState> {
    ContinuityProjector::new(grid, rhs.clone(), PoissonBackend::Spectral, None)?.project(state)
}

/// Floor added to the density in [`momentum_weights`] so no weight vanishes.
const WEIGHT_FLOOR: f64 = 1e-12;

/// Weights for [`project_continuity_weighted`]: `(ρ⁺ + ε)/(ρ⁺ + κ)` on every
/// entry, where `ρ` is the density seen by the entry (cell value, or the
/// average of the two cells of a staggered face).
pub fn momentum_weights(state: &TransportState, grid: &Grid, kappa: f64) -> Result<TransportState> {
    if !(kappa.is_finite() && kappa > 0.0) {
        return Err(Error::InvalidParameter(format!("kappa must be positive, got {kappa}")));
    }
    state.check_shape(grid)?;
    let w = |r: f64| (r.max(0.0) + WEIGHT_FLOOR) / (r.max(0.0) + kappa);
    let mut out = state.clone();
    Zip::from(&mut out.rho).and(&state.rho).for_each(|o, &r| *o = w(r));
    match state.layout {
        Layout::Collocated => {
            for m in out.m.iter_mut() {
                Zip::from(m).and(&state.rho).for_each(|o, &r| *o = w(r));
            }
        }
        Layout::Staggered => {
            let centered = crate::grid::midpoint_average(state, grid)?;
            let rho = &centered.rho;
            for (a, m) in out.m.iter_mut().enumerate() {
                let n = rho.len_of(Axis(a + 1));
                Zip::indexed(m).for_each(|(k, i, j), o| {
                    let f = [i, j][a];
                    let cell = |c: usize| if a == 0 { rho[[k, c, j]] } else { rho[[k, i, c]] };
                    let r = 0.5 * (cell(f.saturating_sub(1)) + cell(f.min(n - 1)));
                    *o = w(r);
                });
            }
        }
    }
    Ok(out)
}

/// Projection onto `C` in the metric weighted by `1/W`, `W` from
/// [`momentum_weights`]: `x − W K_f*φ` with `(K_f W K_f*) φ = K_f x − y`.
/// Corrections scale with the local density, so nearly empty cells stay
/// nearly empty and receive almost no momentum. Blocked entries stay zero when `mask` is set.
pub fn project_continuity_weighted(
    state: &TransportState,
    rhs: &ContinuityRhs,
    grid: &Grid,
    kappa: f64,
    mask: Option<&ObstacleMask>,
) -> Result<TransportState> {
    project_weighted(state, rhs, grid, kappa, mask, 0.0)
}

/// [`project_continuity_weighted`] with CG stopped once the residual is
/// below `loose` times the source, if that is larger than the exact target.
pub(crate) fn project_weighted(
    state: &TransportState,
    rhs: &ContinuityRhs,
    grid: &Grid,
    kappa: f64,
    mask: Option<&ObstacleMask>,
    loose: f64,
) -> Result<TransportState> {
    let mut out = state.clone();
    if let Some(mask) = mask {
        mask.check_shape(grid)?;
        mask.apply_in_place(&mut out);
    }
    let op = PoissonOperator::weighted(grid, momentum_weights(&out, grid, kappa)?, mask.cloned())?;
    let mut source = continuity_source(&out, rhs, grid)?;
    if mask.is_none() {
        let l1 = |a: &Array3<f64>| a.iter().map(|v| v.abs()).sum::<f64>();
        let scale = 2.0 * l1(&rhs.y) + l1(&(&source + &rhs.y));
        remove_mean_scaled(&mut source, scale)?;
    }
    // tolerance tied to the size of K x and y, so a nearly feasible state
    // costs few iterations
    let euclid = |a: &Array3<f64>| a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let kx = &source + &rhs.y;
    let atol = (CG_TOL * (euclid(&rhs.y) + euclid(&kx))).max(loose * euclid(&source));
    let phi = op.solve_cg_to(&source, None, atol)?;
    out.axpy(-1.0, &op.correction(&phi)?);
    Ok(out)
}

/// Poisson backend of a [`ContinuityProjector`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PoissonBackend {
    Spectral,
    ConjugateGradient,
}

/// Reusable continuity projection. Owns the transform plans and the warm
/// start of the CG backend.
pub struct ContinuityProjector {
    grid: Grid,
    rhs: ContinuityRhs,
    spectral: Option<SpectralPoisson>,
    operator: PoissonOperator,
    warm: Option<Array3<f64>>,
}

impl ContinuityProjector {
    /// With a mask the projection also keeps blocked entries at zero and
    /// always uses conjugate gradients.
    pub fn new(grid: &Grid, rhs: ContinuityRhs, backend: PoissonBackend, mask: Option<ObstacleMask>) -> Result<Self> {
        if rhs.y.shape() != grid.node_shape(rhs.layout) {
            return Err(Error::ShapeMismatch {
                expected: grid.node_shape(rhs.layout).to_vec(),
                actual: rhs.y.shape().to_vec(),
            });
        }
        if let Some(m) = &mask {
            m.check_shape(grid)?;
        }
        let spectral =
            (backend == PoissonBackend::Spectral && mask.is_none()).then(|| SpectralPoisson::new(grid, rhs.layout));
        let operator = PoissonOperator::new(grid, rhs.layout, mask);
        Ok(Self {
            grid: grid.clone(),
            rhs,
            spectral,
            operator,
            warm: None,
        })
    }

    pub fn rhs(&self) -> &ContinuityRhs {
        &self.rhs
    }

    pub fn project(&mut self, state: &TransportState) -> Result<TransportState> {
        let mut out = state.clone();
        self.project_in_place(&mut out)?;
        Ok(out)
    }

    pub fn project_in_place(&mut self, state: &mut TransportState) -> Result<()> {
        let mut source = continuity_source(state, &self.rhs, &self.grid)?;
        if let Some(mask) = &self.operator.mask {
            // blocked entries must already be zero for the source to be in range
            mask.apply_in_place(state);
            source = continuity_source(state, &self.rhs, &self.grid)?;
        } else {
            let l1 = |a: &Array3<f64>| a.iter().map(|v| v.abs()).sum::<f64>();
            let scale = 2.0 * l1(&self.rhs.y) + l1(&(&source + &self.rhs.y));
            remove_mean_scaled(&mut source, scale)?;
        }
        let phi = match &self.spectral {
            Some(s) => s.solve(&source)?,
            None => {
                let phi = self.operator.solve_cg(&source, self.warm.as_ref())?;
                self.warm = Some(phi.phi.clone());
                phi
            }
        };
        let corr = self.operator.correction(&phi)?;
        state.axpy(-1.0, &corr);
        Ok(())
    }

    pub fn residual(&self, state: &TransportState) -> Result<f64> {
        continuity_residual(state, &self.rhs, &self.grid)
    }
}

/// Cosine basis vector `cos(π q (n + ½)/N)`, exposed for tests.
#[doc(hidden)]
pub fn cosine_mode(n: usize, q: usize) -> Array1<f64> {
    Array1::from_shape_fn(n, |i| (PI * q as f64 * (i as f64 + 0.5) / n as f64).cos())
}
