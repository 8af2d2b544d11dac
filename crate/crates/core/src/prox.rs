//! Pointwise proximal maps, obstacle masking and the kinetic objective.

use ndarray::{Array3, Axis};

use crate::cubic;
use crate::diagram::FundamentalDiagram;
use crate::error::{Error, Result};
use crate::grid::{midpoint_average, Grid, Layout, TransportState};
use crate::point::PointState;
use crate::search::local_minima;

pub const EPS_RHO: f64 = 1e-12;
pub const EPS_M: f64 = 1e-12;

fn check_step(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")))
    }
}

/// Minimizer of `½|ρ−ρ̃|² + ½‖m−m̃‖² + α‖m̃‖²/(2ρ̃)`.
///
/// `ρ̃` is the largest real root of `(ρ̃−ρ)(α+ρ̃)² = (α/2)‖m‖²`; when it is
/// not positive the result is `(0, 0)`.
pub fn prox_kinetic(p: PointState, alpha: f64) -> Result<PointState> {
    check_step("alpha", alpha)?;
    Ok(prox_kinetic_unchecked(p, alpha))
}

pub(crate) fn prox_kinetic_unchecked(p: PointState, alpha: f64) -> PointState {
    let a2 = p.m[0] * p.m[0] + p.m[1] * p.m[1];
    let rho = p.rho;
    let r = if a2 == 0.0 {
        rho
    } else {
        cubic::largest_real_root(
            1.0,
            2.0 * alpha - rho,
            alpha * alpha - 2.0 * alpha * rho,
            -(rho * alpha * alpha + 0.5 * alpha * a2),
        )
    };
    if r > 0.0 {
        let f = r / (alpha + r);
        PointState::new(r, [f * p.m[0], f * p.m[1]])
    } else {
        PointState::default()
    }
}

/// Kinetic prox with the density held fixed at `p.rho` (used on marginal slices).
pub(crate) fn prox_kinetic_fixed_density(p: PointState, alpha: f64) -> PointState {
    if p.rho > 0.0 {
        let f = p.rho / (p.rho + alpha);
        PointState::new(p.rho, [f * p.m[0], f * p.m[1]])
    } else {
        PointState::new(p.rho, [0.0, 0.0])
    }
}

/// Minimizer of `½‖(ρ,m)−(ρ̃,m̃)‖² + τ‖m̃‖²/(2ρ̃)` over `(ρ̃, m̃) ∈ F`.
pub fn prox_kinetic_fd(p: PointState, tau: f64, diag: &FundamentalDiagram) -> Result<PointState> {
    check_step("tau", tau)?;
    if !p.is_finite() {
        return Err(Error::NonFinite("prox_kinetic_fd input"));
    }
    Ok(prox_kinetic_fd_unchecked(p, tau, diag))
}

pub(crate) fn prox_kinetic_fd_unchecked(p: PointState, tau: f64, diag: &FundamentalDiagram) -> PointState {
    let free = prox_kinetic_unchecked(p, tau);
    if diag.contains(free.rho, free.flux_norm()) {
        return free;
    }
    let rho = p.rho;
    let a = p.flux_norm();
    let rh = diag.rho_hat();
    if a == 0.0 {
        return PointState::new(rho.clamp(0.0, rh), [0.0, 0.0]);
    }

    let obj = |r: f64, s: f64| {
        let kin = if s == 0.0 { 0.0 } else { tau * s * s / (2.0 * r) };
        0.5 * (r - rho) * (r - rho) + 0.5 * (s - a) * (s - a) + kin
    };
    let mut best = (0.0, 0.0);
    let mut best_val = obj(0.0, 0.0);
    let mut consider = |r: f64, s: f64| {
        let v = obj(r, s);
        if v < best_val {
            best_val = v;
            best = (r, s);
        }
    };
    consider(rh, 0.0);
    if let Some(k) = diag.kinks() {
        consider(k, diag.q(k));
    }

    let d1 = |r: f64| {
        let (q, sp, dq) = (diag.q(r), diag.speed(r), diag.flux_derivative(r));
        (r - rho) - 0.5 * tau * sp * sp - dq * (a - q - tau * sp)
    };
    let d2 = |r: f64| {
        let (q, sp, dq) = (diag.q(r), diag.speed(r), diag.flux_derivative(r));
        let t = sp - dq;
        1.0 + dq * dq + tau / r * t * t - diag.flux_second_derivative(r) * (a - q - tau * sp)
    };
    let mut roots = Vec::new();
    for (lo, hi) in diag.search_pieces() {
        local_minima(lo.max(1e-12), hi, d1, d2, &mut roots);
    }
    for &r in &roots {
        consider(r, diag.q(r).max(0.0));
    }

    let (r, s) = best;
    debug_assert!(
        !roots.contains(&r) || a - s - tau * diag.speed(r) >= -1e-8 * (1.0 + a),
        "negative capacity multiplier at rho={rho} a={a} tau={tau}"
    );
    p.along(r, s)
}

/// Blocked cells over the spatial grid, static or per time node.
#[derive(Clone, Debug, PartialEq)]
pub struct ObstacleMask {
    /// `times × n0 × n1`, `true` where the cell is free; `times` is 1 or `P+1`.
    free: Array3<bool>,
}

impl ObstacleMask {
    pub fn new(free: Array3<bool>) -> Self {
        Self { free }
    }

    pub fn all_free(grid: &Grid) -> Self {
        let (n0, n1) = grid.spatial_shape();
        Self::new(Array3::from_elem((1, n0, n1), true))
    }

    pub fn free(&self) -> &Array3<bool> {
        &self.free
    }

    pub fn is_time_varying(&self) -> bool {
        self.free.len_of(Axis(0)) > 1
    }

    pub fn check_shape(&self, grid: &Grid) -> Result<()> {
        let (n0, n1) = grid.spatial_shape();
        let t = self.free.len_of(Axis(0));
        if (t != 1 && t != grid.steps() + 1) || self.free.shape()[1..] != [n0, n1] {
            return Err(Error::ShapeMismatch {
                expected: vec![grid.steps() + 1, n0, n1],
                actual: self.free.shape().to_vec(),
            });
        }
        Ok(())
    }

    /// Whether cell `(i, j)` is free at time node `k`.
    pub fn is_free(&self, k: usize, i: usize, j: usize) -> bool {
        let k = if self.is_time_varying() { k } else { 0 };
        self.free[[k, i, j]]
    }

    pub fn blocked_count(&self, k: usize) -> usize {
        let k = if self.is_time_varying() { k } else { 0 };
        self.free.index_axis(Axis(0), k).iter().filter(|f| !**f).count()
    }

    /// Same mask with `other`'s blocked cells added.
    pub fn union(&self, other: &Self) -> Result<Self> {
        if self.free.shape()[1..] != other.free.shape()[1..] {
            return Err(Error::ShapeMismatch {
                expected: self.free.shape().to_vec(),
                actual: other.free.shape().to_vec(),
            });
        }
        let t = self.free.len_of(Axis(0)).max(other.free.len_of(Axis(0)));
        let (n0, n1) = (self.free.shape()[1], self.free.shape()[2]);
        let pick = |m: &Self, k: usize| if m.is_time_varying() { k } else { 0 };
        let free = Array3::from_shape_fn((t, n0, n1), |(k, i, j)| {
            self.free[[pick(self, k), i, j]] && other.free[[pick(other, k), i, j]]
        });
        Ok(Self::new(free))
    }

    /// Zero every blocked entry of `state`.
    pub(crate) fn apply_in_place(&self, state: &mut TransportState) {
        let (n0, n1) = (self.free.shape()[1], self.free.shape()[2]);
        match state.layout {
            Layout::Collocated => {
                let slices = state.rho.len_of(Axis(0));
                for k in 0..slices {
                    for i in 0..n0 {
                        for j in 0..n1 {
                            if !self.is_free(k, i, j) {
                                state.rho[[k, i, j]] = 0.0;
                                for m in state.m.iter_mut() {
                                    m[[k, i, j]] = 0.0;
                                }
                            }
                        }
                    }
                }
            }
            Layout::Staggered => {
                let levels = state.rho.len_of(Axis(0));
                for s in 0..levels {
                    // level s − 1/2 lies between nodes s − 1 and s
                    let (k0, k1) = (s.saturating_sub(1), s.min(levels - 2));
                    for i in 0..n0 {
                        for j in 0..n1 {
                            if !self.is_free(k0, i, j) || !self.is_free(k1, i, j) {
                                state.rho[[s, i, j]] = 0.0;
                            }
                        }
                    }
                }
                for (axis, m) in state.m.iter_mut().enumerate() {
                    let shape = m.raw_dim();
                    for k in 0..shape[0] {
                        for fi in 0..shape[1] {
                            for fj in 0..shape[2] {
                                let f = if axis == 0 { fi } else { fj };
                                let n = if axis == 0 { n0 } else { n1 };
                                let cell = |c: usize| {
                                    if axis == 0 {
                                        (c, fj)
                                    } else {
                                        (fi, c)
                                    }
                                };
                                let mut blocked = false;
                                if f > 0 {
                                    let (i, j) = cell(f - 1);
                                    blocked |= !self.is_free(k, i, j);
                                }
                                if f < n {
                                    let (i, j) = cell(f);
                                    blocked |= !self.is_free(k, i, j);
                                }
                                if blocked {
                                    m[[k, fi, fj]] = 0.0;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Set `(ρ, m) = (0, 0)` on blocked cells (and, in staggered mode, on faces
/// adjacent to a blocked cell).
pub fn apply_obstacle(state: &TransportState, mask: &ObstacleMask, grid: &Grid) -> Result<TransportState> {
    state.check_shape(grid)?;
    mask.check_shape(grid)?;
    let mut out = state.clone();
    mask.apply_in_place(&mut out);
    Ok(out)
}

/// Kinetic energy density `‖m‖²/(2ρ)` with the small-density convention.
pub fn point_energy(rho: f64, a2: f64) -> f64 {
    if rho > EPS_RHO {
        0.5 * a2 / rho
    } else if a2.sqrt() <= EPS_M {
        0.0
    } else {
        0.5 * a2 / EPS_RHO
    }
}

/// Volume-weighted kinetic energy. Staggered states are evaluated on their
/// midpoint average.
pub fn objective(state: &TransportState, grid: &Grid) -> Result<f64> {
    let centered;
    let s = match state.layout {
        Layout::Collocated => {
            state.check_shape(grid)?;
            state
        }
        Layout::Staggered => {
            centered = midpoint_average(state, grid)?;
            &centered
        }
    };
    let (n0, n1) = grid.spatial_shape();
    let mut total = 0.0;
    for k in 0..=grid.steps() {
        let mut slice = 0.0;
        for i in 0..n0 {
            for j in 0..n1 {
                let a2: f64 = s.m.iter().map(|m| m[[k, i, j]] * m[[k, i, j]]).sum();
                slice += point_energy(s.rho[[k, i, j]], a2);
            }
        }
        total += grid.slice_weight(Layout::Collocated, k) * slice;
    }
    Ok(total * grid.node_volume())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kinetic_prox_examples() {
        let p = prox_kinetic(PointState::scalar(1.0, 0.0), 0.5).unwrap();
        assert_eq!(p, PointState::scalar(1.0, 0.0));
        let p = prox_kinetic(PointState::scalar(0.0, 0.0), 3.0).unwrap();
        assert_eq!(p, PointState::default());
        let p = prox_kinetic(PointState::scalar(1.0, 1.0), 1.0).unwrap();
        assert!((p.rho - 1.1121).abs() < 1e-4);
        assert!((p.m[0] - p.rho / (1.0 + p.rho)).abs() < 1e-14);
        assert!(prox_kinetic(PointState::default(), 0.0).is_err());
        assert!(prox_kinetic(PointState::default(), -1.0).is_err());
    }

    #[test]
    fn kinetic_prox_collapses_negative_density() {
        let p = prox_kinetic(PointState::scalar(-2.0, 0.1), 0.5).unwrap();
        assert_eq!(p, PointState::default());
    }

    #[test]
    fn kinetic_prox_satisfies_kkt() {
        for &(rho, m, alpha) in &[(1.0, 1.0, 1.0), (0.3, -2.0, 0.1), (5.0, 0.5, 3.0)] {
            let p = prox_kinetic(PointState::scalar(rho, m), alpha).unwrap();
            let r = p.rho;
            let lhs = (r - rho) * (alpha + r) * (alpha + r);
            assert!((lhs - 0.5 * alpha * m * m).abs() < 1e-10);
            // stationarity in m̃: (m̃ − m) + α m̃ / ρ̃ = 0
            assert!(((p.m[0] - m) + alpha * p.m[0] / r).abs() < 1e-10);
        }
    }

    #[test]
    fn combined_prox_examples() {
        let d = FundamentalDiagram::greenshields(2.0, 0.03).unwrap();
        assert_eq!(
            prox_kinetic_fd(PointState::default(), 0.1, &d).unwrap(),
            PointState::default()
        );
        let p = PointState::scalar(0.01, 0.001);
        let free = prox_kinetic(p, 0.1).unwrap();
        assert_eq!(prox_kinetic_fd(p, 0.1, &d).unwrap(), free);
        assert!(prox_kinetic_fd(p, 0.0, &d).is_err());
        let out = prox_kinetic_fd(PointState::scalar(0.02, 0.05), 0.1, &d).unwrap();
        assert!(d.contains(out.rho, out.m[0] - 1e-15));
    }

    #[test]
    fn combined_prox_zero_flux_clamps_density() {
        let d = FundamentalDiagram::greenshields(2.0, 0.03).unwrap();
        let out = prox_kinetic_fd(PointState::scalar(0.05, 0.0), 0.1, &d).unwrap();
        assert_eq!(out, PointState::scalar(0.03, 0.0));
    }

    #[test]
    fn objective_examples() {
        let g = Grid::new(&[4, 3], 5).unwrap();
        let mut x = TransportState::zeros(&g, Layout::Collocated);
        assert_eq!(objective(&x, &g).unwrap(), 0.0);
        x.rho.fill(1.0);
        x.m[0].fill(0.6);
        x.m[1].fill(0.8);
        assert!((objective(&x, &g).unwrap() - 0.5).abs() < 1e-14);
        // surrogate for mass-free motion
        let mut y = TransportState::zeros(&g, Layout::Collocated);
        y.m[0][[2, 0, 0]] = 1.0;
        let want = 0.5 / EPS_RHO * g.node_volume();
        assert!((objective(&y, &g).unwrap() - want).abs() < 1e-6 * want);
    }

    #[test]
    fn obstacle_masks() {
        let g = Grid::new(&[3, 3], 2).unwrap();
        let mut x = TransportState::zeros(&g, Layout::Collocated);
        x.rho.fill(1.0);
        x.m[0].fill(2.0);
        let free = ObstacleMask::all_free(&g);
        assert_eq!(apply_obstacle(&x, &free, &g).unwrap(), x);
        let blocked = ObstacleMask::new(Array3::from_elem((1, 3, 3), false));
        assert_eq!(
            apply_obstacle(&x, &blocked, &g).unwrap(),
            TransportState::zeros(&g, Layout::Collocated)
        );

        let mut one = Array3::from_elem((1, 3, 3), true);
        one[[0, 1, 2]] = false;
        let mask = ObstacleMask::new(one);
        let y = apply_obstacle(&x, &mask, &g).unwrap();
        for k in 0..3 {
            for i in 0..3 {
                for j in 0..3 {
                    let want = if (i, j) == (1, 2) { 0.0 } else { 1.0 };
                    assert_eq!(y.rho[[k, i, j]], want);
                    assert_eq!(y.m[0][[k, i, j]], 2.0 * want);
                }
            }
        }
        assert_eq!(apply_obstacle(&y, &mask, &g).unwrap(), y);
    }

    #[test]
    fn staggered_obstacle_blocks_adjacent_faces() {
        let g = Grid::new(&[3, 3], 2).unwrap();
        let mut x = TransportState::zeros(&g, Layout::Staggered);
        x.rho.fill(1.0);
        x.m[0].fill(1.0);
        x.m[1].fill(1.0);
        let mut one = Array3::from_elem((1, 3, 3), true);
        one[[0, 1, 1]] = false;
        let y = apply_obstacle(&x, &ObstacleMask::new(one), &g).unwrap();
        for k in 0..3 {
            for f in 0..4 {
                for j in 0..3 {
                    let blocked = j == 1 && (f == 1 || f == 2);
                    assert_eq!(y.m[0][[k, f, j]], if blocked { 0.0 } else { 1.0 });
                    assert_eq!(y.m[1][[k, j, f]], if blocked { 0.0 } else { 1.0 });
                }
            }
        }
        for s in 0..4 {
            assert_eq!(y.rho[[s, 1, 1]], 0.0);
            assert_eq!(y.rho[[s, 0, 1]], 1.0);
        }
    }
}
