//! Fundamental diagrams `Q(ρ)` and the pointwise projection onto
//! `F = {(ρ, m) : ‖m‖ ≤ Q(ρ), 0 ≤ ρ ≤ ρ̂}`.

use ndarray::{Array3, Axis};

use crate::cubic;
use crate::error::{Error, Result};
use crate::grid::{midpoint_average, Grid, Layout, TransportState};
use crate::point::PointState;
use crate::search::local_minima;

/// Shape family of a fundamental diagram.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Family {
    /// `Q = v0 ρ (1 − ρ/ρ̂)`.
    Greenshields,
    /// `Q = min(v0 ρ, w (ρ̂ − ρ))` with `w = v0 ρ_c / (ρ̂ − ρ_c)`.
    Triangular { rho_c: f64, w: f64 },
    /// `Q = v0 ρ (1 − αρ)` below `ρ_c`, `γ ρ (1/ρ − 1/ρ̂)^β` above.
    /// Smulders is `β = 1`, De Romph has free `β`.
    Beta {
        rho_c: f64,
        alpha: f64,
        beta: f64,
        gamma: f64,
    },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FundamentalDiagram {
    v0: f64,
    rho_hat: f64,
    family: Family,
    critical: (f64, f64),
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "{name} must be positive and finite, got {v}"
        )))
    }
}

/// `sign(u) |u|^β`, the odd extension used beyond the jam density.
fn signed_pow(u: f64, beta: f64) -> f64 {
    u.signum() * u.abs().powf(beta)
}

impl FundamentalDiagram {
    pub fn greenshields(v0: f64, rho_hat: f64) -> Result<Self> {
        positive("v0", v0)?;
        positive("rho_hat", rho_hat)?;
        Ok(Self {
            v0,
            rho_hat,
            family: Family::Greenshields,
            critical: (0.5 * rho_hat, 0.25 * v0 * rho_hat),
        })
    }

    pub fn triangular(v0: f64, rho_hat: f64, rho_c: f64) -> Result<Self> {
        positive("v0", v0)?;
        positive("rho_hat", rho_hat)?;
        positive("rho_c", rho_c)?;
        if rho_c >= rho_hat {
            return Err(Error::InvalidParameter(format!(
                "rho_c = {rho_c} must be below rho_hat = {rho_hat}"
            )));
        }
        let w = v0 * rho_c / (rho_hat - rho_c);
        Ok(Self {
            v0,
            rho_hat,
            family: Family::Triangular { rho_c, w },
            critical: (rho_c, v0 * rho_c),
        })
    }

    pub fn beta(v0: f64, rho_hat: f64, rho_c: f64, alpha: f64, beta: f64) -> Result<Self> {
        positive("v0", v0)?;
        positive("rho_hat", rho_hat)?;
        positive("rho_c", rho_c)?;
        positive("beta", beta)?;
        if rho_c >= rho_hat {
            return Err(Error::InvalidParameter(format!(
                "rho_c = {rho_c} must be below rho_hat = {rho_hat}"
            )));
        }
        if !(alpha.is_finite() && alpha >= 0.0 && alpha * rho_c < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "alpha = {alpha} must satisfy 0 <= alpha * rho_c < 1"
            )));
        }
        let gamma = v0 * (1.0 - alpha * rho_c) * (1.0 / rho_c - 1.0 / rho_hat).powf(-beta);
        let mut d = Self {
            v0,
            rho_hat,
            family: Family::Beta {
                rho_c,
                alpha,
                beta,
                gamma,
            },
            critical: (0.0, 0.0),
        };
        d.critical = d.maximize_flux();
        Ok(d)
    }

    /// Smulders diagram: the β-family with `β = 1`.
    pub fn smulders(v0: f64, rho_hat: f64, rho_c: f64, alpha: f64) -> Result<Self> {
        Self::beta(v0, rho_hat, rho_c, alpha, 1.0)
    }

    pub fn v0(&self) -> f64 {
        self.v0
    }

    pub fn rho_hat(&self) -> f64 {
        self.rho_hat
    }

    pub fn family(&self) -> Family {
        self.family
    }

    /// Same family with new `v0` and `ρ̂`. The shape is kept: `ρ_c/ρ̂` and
    /// `α ρ_c` are preserved.
    pub fn with_params(&self, v0: f64, rho_hat: f64) -> Result<Self> {
        let f = rho_hat / self.rho_hat;
        match self.family {
            Family::Greenshields => Self::greenshields(v0, rho_hat),
            Family::Triangular { rho_c, .. } => Self::triangular(v0, rho_hat, rho_c * f),
            Family::Beta { rho_c, alpha, beta, .. } => Self::beta(v0, rho_hat, rho_c * f, alpha / f, beta),
        }
    }

    /// Rescale every density parameter by `factor`, e.g. to convert per-cell
    /// densities into densities per unit volume.
    pub fn rescale_density(&self, factor: f64) -> Result<Self> {
        positive("density scale factor", factor)?;
        self.with_params(self.v0, self.rho_hat * factor)
    }

    /// `Q(ρ)`, rejecting NaN input.
    pub fn flux(&self, rho: f64) -> Result<f64> {
        if rho.is_nan() {
            return Err(Error::NonFinite("flux argument"));
        }
        Ok(self.q(rho))
    }

    /// `Q(ρ)` without input checks. Outside `[0, ρ̂]` the formula is
    /// extended so that the value is negative.
    pub fn q(&self, r: f64) -> f64 {
        match self.family {
            Family::Greenshields => self.v0 * r * (1.0 - r / self.rho_hat),
            Family::Triangular { w, .. } => (self.v0 * r).min(w * (self.rho_hat - r)),
            Family::Beta {
                rho_c,
                alpha,
                beta,
                gamma,
            } => {
                if r < rho_c {
                    self.v0 * r * (1.0 - alpha * r)
                } else {
                    gamma * r * signed_pow(1.0 / r - 1.0 / self.rho_hat, beta)
                }
            }
        }
    }

    /// `Q(ρ)/ρ`, evaluated without dividing by `ρ`.
    pub fn speed(&self, r: f64) -> f64 {
        match self.family {
            Family::Greenshields => self.v0 * (1.0 - r / self.rho_hat),
            Family::Triangular { rho_c, w } => {
                if r <= rho_c {
                    self.v0
                } else {
                    w * (self.rho_hat - r) / r
                }
            }
            Family::Beta {
                rho_c,
                alpha,
                beta,
                gamma,
            } => {
                if r < rho_c {
                    self.v0 * (1.0 - alpha * r)
                } else {
                    gamma * signed_pow(1.0 / r - 1.0 / self.rho_hat, beta)
                }
            }
        }
    }

    /// `Q′(ρ)` (one-sided from the right at the kinks).
    pub fn flux_derivative(&self, r: f64) -> f64 {
        match self.family {
            Family::Greenshields => self.v0 * (1.0 - 2.0 * r / self.rho_hat),
            Family::Triangular { rho_c, w } => {
                if r < rho_c {
                    self.v0
                } else {
                    -w
                }
            }
            Family::Beta {
                rho_c,
                alpha,
                beta,
                gamma,
            } => {
                if r < rho_c {
                    self.v0 * (1.0 - 2.0 * alpha * r)
                } else {
                    let u = 1.0 / r - 1.0 / self.rho_hat;
                    gamma * u.abs().powf(beta - 1.0) * (u - beta / r)
                }
            }
        }
    }

    /// `Q″(ρ)`.
    pub fn flux_second_derivative(&self, r: f64) -> f64 {
        match self.family {
            Family::Greenshields => -2.0 * self.v0 / self.rho_hat,
            Family::Triangular { .. } => 0.0,
            Family::Beta {
                rho_c,
                alpha,
                beta,
                gamma,
            } => {
                if r < rho_c {
                    -2.0 * alpha * self.v0
                } else {
                    let u = 1.0 / r - 1.0 / self.rho_hat;
                    gamma * beta * (beta - 1.0) * u.abs().powf(beta - 2.0) / (r * r * r)
                }
            }
        }
    }

    /// Maximizer and maximum of `Q` on `[0, ρ̂]`.
    pub fn critical_point(&self) -> (f64, f64) {
        self.critical
    }

    /// Breakpoints of `Q` strictly inside `(0, ρ̂)`.
    pub fn kinks(&self) -> Option<f64> {
        match self.family {
            Family::Greenshields => None,
            Family::Triangular { rho_c, .. } | Family::Beta { rho_c, .. } => Some(rho_c),
        }
    }

    /// Smooth pieces of `Q` on `[0, ρ̂]`.
    fn pieces(&self) -> Vec<(f64, f64)> {
        match self.kinks() {
            None => vec![(0.0, self.rho_hat)],
            Some(c) => vec![(0.0, c), (c, self.rho_hat)],
        }
    }

    /// Upper end for derivative evaluations; the β-family has an unbounded
    /// slope at the jam density when β < 1.
    fn search_hi(&self) -> f64 {
        match self.family {
            Family::Beta { .. } => self.rho_hat * (1.0 - 1e-9),
            _ => self.rho_hat,
        }
    }

    pub fn contains(&self, rho: f64, flux: f64) -> bool {
        (0.0..=self.rho_hat).contains(&rho) && flux <= self.q(rho)
    }

    fn maximize_flux(&self) -> (f64, f64) {
        const SAMPLES: usize = 4000;
        let h = self.rho_hat / SAMPLES as f64;
        let (mut best, mut best_q) = (0usize, f64::NEG_INFINITY);
        for i in 0..=SAMPLES {
            let q = self.q(i as f64 * h);
            if q > best_q {
                best = i;
                best_q = q;
            }
        }
        // golden-section refinement on the bracketing samples
        let (mut a, mut b) = (
            (best.saturating_sub(1)) as f64 * h,
            ((best + 1).min(SAMPLES)) as f64 * h,
        );
        let g = 0.5 * (5f64.sqrt() - 1.0);
        let mut c = b - g * (b - a);
        let mut d = a + g * (b - a);
        while b - a > 1e-10 * self.rho_hat {
            if self.q(c) > self.q(d) {
                b = d;
            } else {
                a = c;
            }
            c = b - g * (b - a);
            d = a + g * (b - a);
        }
        let mut r = 0.5 * (a + b);
        if let Some(k) = self.kinks() {
            if self.q(k) > self.q(r) {
                r = k;
            }
        }
        if best_q > self.q(r) {
            r = best as f64 * h;
        }
        (r, self.q(r))
    }

    /// Euclidean projection of `p` onto `F`.
    pub fn project(&self, p: PointState) -> PointState {
        let a = p.flux_norm();
        if self.contains(p.rho, a) {
            return p;
        }
        if a == 0.0 {
            return PointState::new(p.rho.clamp(0.0, self.rho_hat), [0.0, 0.0]);
        }
        let (r, s) = self.project_radial(p.rho, a);
        p.along(r, s)
    }

    /// Nearest point of the `(density, flux magnitude)` region to `(ρ, a)`, `a > 0`.
    fn project_radial(&self, rho: f64, a: f64) -> (f64, f64) {
        let mut cands: Vec<(f64, f64)> = Vec::with_capacity(8);
        let rc = rho.clamp(0.0, self.rho_hat);
        cands.push((0.0, 0.0));
        cands.push((self.rho_hat, 0.0));
        cands.push((rc, self.q(rc).max(0.0)));
        match self.family {
            Family::Greenshields => {
                // roots of the stationarity cubic in u = r/ρ̂
                let (v0, rh) = (self.v0, self.rho_hat);
                let roots = cubic::real_roots(
                    2.0 * v0 * v0,
                    -3.0 * v0 * v0,
                    v0 * v0 + 2.0 * a * v0 / rh + 1.0,
                    -(rho + a * v0) / rh,
                );
                let c3 = 2.0 * v0 * v0 / (rh * rh);
                let c2 = -3.0 * v0 * v0 / rh;
                let c1 = v0 * v0 + 2.0 * a * v0 / rh + 1.0;
                let c0 = -(rho + a * v0);
                for u in roots {
                    let mut r = u * rh;
                    for _ in 0..2 {
                        let f = ((c3 * r + c2) * r + c1) * r + c0;
                        let df = (3.0 * c3 * r + 2.0 * c2) * r + c1;
                        if df != 0.0 {
                            r -= f / df;
                        }
                    }
                    if r > 0.0 && r < rh {
                        cands.push((r, self.q(r)));
                    }
                }
            }
            Family::Triangular { rho_c, w } => {
                let v0 = self.v0;
                cands.push((rho_c, v0 * rho_c));
                let t = (rho + v0 * a) / (1.0 + v0 * v0);
                if (0.0..=rho_c).contains(&t) {
                    cands.push((t, v0 * t));
                }
                let r = (rho + w * w * self.rho_hat - w * a) / (1.0 + w * w);
                if (rho_c..=self.rho_hat).contains(&r) {
                    cands.push((r, w * (self.rho_hat - r)));
                }
            }
            Family::Beta { rho_c, .. } => {
                cands.push((rho_c, self.q(rho_c)));
                let mut roots = Vec::new();
                for (lo, hi) in self.pieces() {
                    local_minima(
                        lo,
                        hi.min(self.search_hi()),
                        |r| (r - rho) + (self.q(r) - a) * self.flux_derivative(r),
                        |r| {
                            let d = self.flux_derivative(r);
                            1.0 + d * d + (self.q(r) - a) * self.flux_second_derivative(r)
                        },
                        &mut roots,
                    );
                }
                cands.extend(roots.into_iter().map(|r| (r, self.q(r))));
            }
        }
        let dist = |&(r, s): &(f64, f64)| (r - rho) * (r - rho) + (s - a) * (s - a);
        cands
            .into_iter()
            .filter(|&(r, s)| (0.0..=self.rho_hat).contains(&r) && s >= 0.0)
            .min_by(|x, y| dist(x).total_cmp(&dist(y)))
            .expect("endpoint candidates are always present")
    }

    pub(crate) fn search_pieces(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        let hi = self.search_hi();
        self.pieces().into_iter().map(move |(lo, h)| (lo, h.min(hi)))
    }
}

/// Projection of `(ρ, m)` onto `F` for the diagram `diag`.
pub fn project_fd(diag: &FundamentalDiagram, p: PointState) -> PointState {
    diag.project(p)
}

/// Diagram parameters over the lattice: one diagram everywhere, or one per
/// spatial cell and optionally per time slice.
#[derive(Clone, Debug, PartialEq)]
pub enum DiagramField {
    Uniform(FundamentalDiagram),
    Varying {
        /// `times × n0 × n1` diagrams, `times` is 1 or `P+1`.
        diagrams: Array3<FundamentalDiagram>,
    },
}

impl DiagramField {
    /// Per-cell field built from `base` with `v0` and `ρ̂` arrays of shape
    /// `(1 or P+1, n0, n1)`.
    pub fn varying(base: &FundamentalDiagram, v0: &Array3<f64>, rho_hat: &Array3<f64>) -> Result<Self> {
        if v0.shape() != rho_hat.shape() {
            return Err(Error::ShapeMismatch {
                expected: v0.shape().to_vec(),
                actual: rho_hat.shape().to_vec(),
            });
        }
        let mut cells = Vec::with_capacity(v0.len());
        for (&v, &r) in v0.iter().zip(rho_hat.iter()) {
            cells.push(base.with_params(v, r)?);
        }
        let diagrams = Array3::from_shape_vec(v0.raw_dim(), cells).expect("same element count");
        Ok(Self::Varying { diagrams })
    }

    pub fn check_shape(&self, grid: &Grid) -> Result<()> {
        if let Self::Varying { diagrams } = self {
            let (n0, n1) = grid.spatial_shape();
            let t = diagrams.len_of(Axis(0));
            if (t != 1 && t != grid.steps() + 1) || diagrams.shape()[1..] != [n0, n1] {
                return Err(Error::ShapeMismatch {
                    expected: vec![grid.steps() + 1, n0, n1],
                    actual: diagrams.shape().to_vec(),
                });
            }
        }
        Ok(())
    }

    /// Diagram at time slice `k` and cell `(i, j)`.
    pub fn at(&self, k: usize, i: usize, j: usize) -> &FundamentalDiagram {
        match self {
            Self::Uniform(d) => d,
            Self::Varying { diagrams } => {
                let k = if diagrams.len_of(Axis(0)) == 1 { 0 } else { k };
                &diagrams[[k, i, j]]
            }
        }
    }

    /// Every distinct diagram in the field.
    pub fn iter(&self) -> Box<dyn Iterator<Item = &FundamentalDiagram> + '_> {
        match self {
            Self::Uniform(d) => Box::new(std::iter::once(d)),
            Self::Varying { diagrams } => Box::new(diagrams.iter()),
        }
    }
}

/// Largest normalized capacity excess `(‖m‖ − Q(ρ))₊ / m_c` over the cells
/// where the constraint applies. In collocated mode the marginal slices are
/// exempt; staggered states are measured on their midpoint average.
pub fn max_violation(field: &DiagramField, state: &TransportState, grid: &Grid) -> Result<f64> {
    state.check_shape(grid)?;
    field.check_shape(grid)?;
    let (centered, range) = match state.layout {
        Layout::Collocated => (None, 1..grid.steps()),
        Layout::Staggered => (Some(midpoint_average(state, grid)?), 0..grid.steps() + 1),
    };
    let s = centered.as_ref().unwrap_or(state);
    let (n0, n1) = grid.spatial_shape();
    let mut worst = 0.0f64;
    for k in range {
        for i in 0..n0 {
            for j in 0..n1 {
                let d = field.at(k, i, j);
                let a = match s.m.len() {
                    1 => s.m[0][[k, i, j]].abs(),
                    _ => s.m[0][[k, i, j]].hypot(s.m[1][[k, i, j]]),
                };
                let v = (a - d.q(s.rho[[k, i, j]])).max(0.0) / d.critical_point().1;
                worst = worst.max(v);
            }
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn g(v0: f64, rh: f64) -> FundamentalDiagram {
        FundamentalDiagram::greenshields(v0, rh).unwrap()
    }

    #[test]
    fn greenshields_values() {
        let d = g(2.0, 0.02);
        assert_eq!(d.flux(0.0).unwrap(), 0.0);
        assert_eq!(d.flux(0.02).unwrap(), 0.0);
        assert!((d.flux(0.01).unwrap() - 0.01).abs() < 1e-15);
        assert!(d.flux(f64::NAN).is_err());
        assert!(d.q(0.03) < 0.0 && d.q(-0.01) < 0.0);
    }

    #[test]
    fn greenshields_critical_point() {
        let (rc, mc) = g(2.0, 0.03).critical_point();
        assert!((rc - 0.015).abs() < 1e-15);
        assert!((mc - 0.015).abs() < 1e-15);
        // critical speed is half the free-flow speed
        assert!((mc / rc - 1.0).abs() < 1e-14);
    }

    #[test]
    fn invalid_parameters_are_rejected() {
        assert!(FundamentalDiagram::greenshields(0.0, 1.0).is_err());
        assert!(FundamentalDiagram::greenshields(1.0, -1.0).is_err());
        assert!(FundamentalDiagram::triangular(1.0, 1.0, 1.0).is_err());
        assert!(FundamentalDiagram::beta(1.0, 1.0, 0.5, 2.0, 1.0).is_err());
        assert!(FundamentalDiagram::beta(1.0, 1.0, 0.5, 0.5, 0.0).is_err());
        assert!(FundamentalDiagram::beta(1.0, 1.0, 1.2, 0.5, 1.0).is_err());
    }

    #[test]
    fn smulders_is_continuous_at_the_kink() {
        let d = FundamentalDiagram::smulders(2.0, 1.0, 0.3, 1.0).unwrap();
        let Family::Beta {
            rho_c,
            alpha,
            beta,
            gamma,
        } = d.family()
        else {
            unreachable!()
        };
        let free = d.v0() * rho_c * (1.0 - alpha * rho_c);
        let cong = gamma * rho_c * (1.0 / rho_c - 1.0).powf(beta);
        assert!((free - cong).abs() <= 1e-12 * d.critical_point().1);
        assert!((d.q(rho_c - 1e-15) - d.q(rho_c)).abs() <= 1e-12);
        assert_eq!(d.q(1.0), 0.0);
    }

    #[test]
    fn beta_critical_point_dominates_samples() {
        for (alpha, beta) in [(1.0, 1.0), (0.5, 0.4), (0.0, 2.5), (1.5, 0.7)] {
            let d = FundamentalDiagram::beta(1.7, 1.0, 0.4, alpha, beta).unwrap();
            let (_, mc) = d.critical_point();
            for i in 0..=10_000 {
                let r = i as f64 / 10_000.0;
                assert!(d.q(r) <= mc + 1e-12, "alpha={alpha} beta={beta} r={r}");
            }
        }
    }

    #[test]
    fn concavity_of_greenshields_and_triangular() {
        for d in [g(2.0, 0.03), FundamentalDiagram::triangular(2.0, 0.03, 0.01).unwrap()] {
            for i in 0..200 {
                let a = 0.03 * i as f64 / 200.0;
                let b = 0.03 * (199 - i) as f64 / 200.0;
                assert!(d.q(0.5 * (a + b)) >= 0.5 * (d.q(a) + d.q(b)) - 1e-15);
            }
        }
    }

    #[test]
    fn projection_examples() {
        let d = g(2.0, 0.03);
        let p = PointState::scalar(0.01, 0.01);
        assert_eq!(d.project(p), p);
        let p = d.project(PointState::scalar(0.04, 0.0));
        assert_eq!(p, PointState::scalar(0.03, 0.0));
        let p = d.project(PointState::scalar(-0.5, 0.0));
        assert_eq!(p, PointState::scalar(0.0, 0.0));
    }

    #[test]
    fn greenshields_projection_against_grid_search() {
        let d = g(2.0, 0.03);
        let (rho, a) = (0.015, 0.02);
        let p = d.project(PointState::scalar(rho, a));
        let n = 1_000_000;
        let mut best = (f64::INFINITY, 0.0, 0.0);
        for i in 0..=n {
            let r = 0.03 * i as f64 / n as f64;
            let q = d.q(r);
            let dist = (r - rho).powi(2) + (q - a).powi(2);
            if dist < best.0 {
                best = (dist, r, q);
            }
        }
        assert!((p.rho - best.1).abs() < 1e-6);
        assert!((p.m[0] - best.2).abs() < 1e-6);
    }

    #[test]
    fn triangular_projection_hits_the_apex_region() {
        let d = FundamentalDiagram::triangular(1.0, 1.0, 0.4).unwrap();
        // far above the apex: nearest point is the apex itself
        let p = d.project(PointState::scalar(0.4, 5.0));
        assert!((p.rho - 0.4).abs() < 1e-14 && (p.m[0] - 0.4).abs() < 1e-14);
        // above the congested edge: lands on it
        let p = d.project(PointState::scalar(0.8, 0.5));
        assert!((p.m[0] - d.q(p.rho)).abs() < 1e-14 && p.rho > 0.4);
    }

    #[test]
    fn projection_preserves_direction_in_2d() {
        let d = g(1.0, 1.0);
        let p = d.project(PointState::new(0.5, [0.6, -0.8]));
        assert!((p.m[0] / p.m[1] + 0.75).abs() < 1e-12);
        assert!(p.m[0] > 0.0);
    }

    #[test]
    fn max_violation_examples() {
        let grid = Grid::new(&[4], 3).unwrap();
        let d = g(2.0, 0.03);
        let (rc, mc) = d.critical_point();
        let mut x = TransportState::zeros(&grid, Layout::Collocated);
        x.rho.fill(rc);
        x.m[0].fill(2.0 * mc);
        let field = DiagramField::Uniform(d);
        assert!((max_violation(&field, &x, &grid).unwrap() - 1.0).abs() < 1e-12);
        // marginal slices are exempt
        let mut y = TransportState::zeros(&grid, Layout::Collocated);
        y.rho[[0, 1, 0]] = 1.0;
        y.m[0][[3, 2, 0]] = 1.0;
        assert_eq!(max_violation(&field, &y, &grid).unwrap(), 0.0);
    }

    #[test]
    fn varying_field_checks_each_cell() {
        let base = g(2.0, 0.03);
        let v0 = Array3::from_elem((1, 3, 1), 2.0);
        let mut rh = Array3::from_elem((1, 3, 1), 0.03);
        let f = DiagramField::varying(&base, &v0, &rh).unwrap();
        assert_eq!(f.at(5, 2, 0), &base);
        rh[[0, 1, 0]] = -1.0;
        assert!(DiagramField::varying(&base, &v0, &rh).is_err());
    }
}
