/// Density and momentum at a single lattice cell. In 1D the second momentum
/// component is zero.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct PointState {
    pub rho: f64,
    pub m: [f64; 2],
}

impl PointState {
    pub fn new(rho: f64, m: [f64; 2]) -> Self {
        Self { rho, m }
    }

    pub fn scalar(rho: f64, m: f64) -> Self {
        Self { rho, m: [m, 0.0] }
    }

    pub fn flux_norm(&self) -> f64 {
        self.m[0].hypot(self.m[1])
    }

    pub fn is_finite(&self) -> bool {
        self.rho.is_finite() && self.m.iter().all(|v| v.is_finite())
    }

    /// Point with density `rho` and momentum of magnitude `s` along `self.m`.
    pub(crate) fn along(&self, rho: f64, s: f64) -> Self {
        let a = self.flux_norm();
        if a > 0.0 && s != 0.0 {
            let f = s / a;
            Self::new(rho, [f * self.m[0], f * self.m[1]])
        } else {
            Self::new(rho, [0.0, 0.0])
        }
    }

    pub fn dist2(&self, other: &Self) -> f64 {
        let dr = self.rho - other.rho;
        let d0 = self.m[0] - other.m[0];
        let d1 = self.m[1] - other.m[1];
        dr * dr + d0 * d0 + d1 * d1
    }
}
