//! Pointwise operators applied over a whole state.
//!
//! Collocated states are processed cell by cell; on the marginal slices the
//! density is held fixed and the capacity constraint does not apply. Staggered
//! states are averaged to cell centers, processed there, and the change is
//! spread back with the transpose of the averaging. This lifting is an
//! approximation of the pointwise operator on the staggered unknowns.

use crate::diagram::DiagramField;
use crate::error::Result;
use crate::grid::{midpoint_average, midpoint_average_transpose, Grid, Layout, TransportState};
use crate::point::PointState;
use crate::prox::{prox_kinetic_fd_unchecked, prox_kinetic_fixed_density, prox_kinetic_unchecked};

#[derive(Clone, Copy)]
pub(crate) enum CellOp<'a> {
    Kinetic { alpha: f64 },
    Capacity { field: &'a DiagramField },
    KineticCapacity { tau: f64, field: &'a DiagramField },
}

impl CellOp<'_> {
    fn eval(&self, pinned: bool, k: usize, i: usize, j: usize, p: PointState) -> PointState {
        match *self {
            CellOp::Kinetic { alpha } | CellOp::KineticCapacity { tau: alpha, .. } if pinned => {
                prox_kinetic_fixed_density(p, alpha)
            }
            CellOp::Capacity { .. } if pinned => p,
            CellOp::Kinetic { alpha } => prox_kinetic_unchecked(p, alpha),
            CellOp::Capacity { field } => field.at(k, i, j).project(p),
            CellOp::KineticCapacity { tau, field } => prox_kinetic_fd_unchecked(p, tau, field.at(k, i, j)),
        }
    }
}

/// Apply `op` to every cell of a collocated state; `exempt_marginals`
/// selects the marginal-slice treatment for `k = 0` and `k = P`.
fn apply_collocated(op: CellOp, state: &mut TransportState, grid: &Grid, exempt_marginals: bool) {
    let (n0, n1) = grid.spatial_shape();
    let p_steps = grid.steps();
    let dim = state.m.len();
    let rho = state.rho.as_slice_mut().expect("standard layout");
    let (m0, mut m1) = match state.m.split_first_mut() {
        Some((a, rest)) => (a.as_slice_mut().expect("standard layout"), rest.first_mut()),
        None => unreachable!("at least one momentum component"),
    };
    let mut m1 = m1.as_mut().map(|a| a.as_slice_mut().expect("standard layout"));
    for k in 0..=p_steps {
        let pinned = exempt_marginals && (k == 0 || k == p_steps);
        for i in 0..n0 {
            for j in 0..n1 {
                let idx = (k * n0 + i) * n1 + j;
                let m_second = if dim > 1 { m1.as_ref().unwrap()[idx] } else { 0.0 };
                let p = PointState::new(rho[idx], [m0[idx], m_second]);
                let out = op.eval(pinned, k, i, j, p);
                if !pinned {
                    rho[idx] = out.rho;
                }
                m0[idx] = out.m[0];
                if let Some(m1) = m1.as_mut() {
                    m1[idx] = out.m[1];
                }
            }
        }
    }
}

/// Apply `op` over `state` in place. Pinned entries are restored afterwards.
pub(crate) fn apply(op: CellOp, state: &mut TransportState, grid: &Grid) -> Result<()> {
    match state.layout {
        Layout::Collocated => {
            apply_collocated(op, state, grid, true);
        }
        Layout::Staggered => {
            let centered = midpoint_average(state, grid)?;
            let mut moved = centered.clone();
            apply_collocated(op, &mut moved, grid, false);
            moved.axpy(-1.0, &centered);
            let delta = midpoint_average_transpose(&moved, grid)?;
            let pinned = state.clone();
            state.axpy(1.0, &delta);
            state.copy_pinned_from(&pinned);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diagram::FundamentalDiagram;

    #[test]
    fn marginal_slices_keep_their_density() {
        let g = Grid::new(&[4], 3).unwrap();
        let mut x = TransportState::zeros(&g, Layout::Collocated);
        x.rho.fill(0.5);
        x.m[0].fill(1.0);
        apply(CellOp::Kinetic { alpha: 1.0 }, &mut x, &g).unwrap();
        for i in 0..4 {
            assert_eq!(x.rho[[0, i, 0]], 0.5);
            assert_eq!(x.rho[[3, i, 0]], 0.5);
            assert!((x.m[0][[0, i, 0]] - 0.5 / 1.5).abs() < 1e-15);
            assert!(x.rho[[1, i, 0]] > 0.5);
        }
    }

    #[test]
    fn capacity_does_not_apply_on_marginals() {
        let g = Grid::new(&[4], 3).unwrap();
        let field = DiagramField::Uniform(FundamentalDiagram::greenshields(1.0, 1.0).unwrap());
        let mut x = TransportState::zeros(&g, Layout::Collocated);
        x.rho.fill(2.0);
        apply(CellOp::Capacity { field: &field }, &mut x, &g).unwrap();
        assert_eq!(x.rho[[0, 0, 0]], 2.0);
        assert_eq!(x.rho[[1, 0, 0]], 1.0);
    }

    #[test]
    fn staggered_lift_preserves_pinned_entries() {
        let g = Grid::new(&[4, 3], 3).unwrap();
        let mut x = TransportState::zeros(&g, Layout::Staggered);
        x.rho.fill(0.3);
        x.m[0].fill(0.2);
        x.m[1].fill(-0.1);
        let before = x.clone();
        apply(CellOp::Kinetic { alpha: 0.5 }, &mut x, &g).unwrap();
        let mut a = x.clone();
        let mut b = before.clone();
        a.zero_pinned();
        b.zero_pinned();
        let mut pin_x = x.clone();
        pin_x.axpy(-1.0, &a);
        let mut pin_b = before.clone();
        pin_b.axpy(-1.0, &b);
        assert_eq!(pin_x, pin_b);
        assert_ne!(a, b);
    }
}
