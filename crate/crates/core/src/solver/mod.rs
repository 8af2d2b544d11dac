//! Iterative solvers and their shared configuration, logging and stopping rule.

pub(crate) mod cellwise;
pub mod cp;
pub mod drs;

use std::collections::VecDeque;
use std::time::Instant;

use crate::error::{Error, Result};
use crate::grid::TransportState;

/// Length of the window for the relative objective-change test.
const WINDOW: usize = 10;
/// Divergence guard: abort once the objective exceeds this multiple of its
/// initial value (floored at one).
const BLOWUP: f64 = 1e6;

#[derive(Clone, Debug, PartialEq)]
pub struct SolverConfig {
    pub max_iters: usize,
    /// Relative objective change over a 10-iteration window.
    pub tol_obj: f64,
    /// Bound on the continuity residual and the capacity violation.
    pub tol_feas: f64,
    /// Douglas–Rachford prox step.
    pub alpha: f64,
    /// Chambolle–Pock primal step; defaults to `0.95/‖K‖`.
    pub tau: Option<f64>,
    /// Chambolle–Pock dual step; defaults to `0.95/‖K‖`.
    pub sigma: Option<f64>,
    pub log_every: usize,
    pub seed: u64,
    /// Power iterations used to estimate `‖K‖`.
    pub norm_iters: usize,
    /// Fold the obstacle mask into the kinetic block instead of a fourth block.
    pub fuse_obstacles: bool,
    /// Record wall-clock time in the log (disable for reproducible logs).
    pub record_elapsed: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_iters: 5000,
            tol_obj: 1e-7,
            tol_feas: 1e-6,
            alpha: 1.0,
            tau: None,
            sigma: None,
            log_every: 1,
            seed: 0,
            norm_iters: 200,
            fuse_obstacles: false,
            record_elapsed: false,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")))
            }
        };
        positive("tol_obj", self.tol_obj)?;
        positive("tol_feas", self.tol_feas)?;
        positive("alpha", self.alpha)?;
        if let Some(t) = self.tau {
            positive("tau", t)?;
        }
        if let Some(s) = self.sigma {
            positive("sigma", s)?;
        }
        if self.log_every == 0 {
            return Err(Error::InvalidParameter("log_every must be at least 1".into()));
        }
        if self.norm_iters == 0 {
            return Err(Error::InvalidParameter("norm_iters must be at least 1".into()));
        }
        Ok(())
    }
}

/// One row of the convergence log.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvergenceRecord {
    pub iter: usize,
    pub objective: f64,
    pub continuity_residual: f64,
    pub fd_violation: f64,
    /// `‖x^{k+1} − x^k‖` in the volume-weighted norm.
    pub step_change: f64,
    /// Seconds since the start of the run (zero unless timing is recorded).
    pub elapsed: f64,
    /// Objective of the running average of the primal iterates (Chambolle–Pock only).
    pub ergodic_objective: Option<f64>,
}

/// Result of a solver run.
#[derive(Clone, Debug)]
pub struct SolveOutput {
    /// Reported state after the final capacity and continuity projections.
    pub solution: TransportState,
    pub log: Vec<ConvergenceRecord>,
    pub iterations: usize,
    pub converged: bool,
    pub objective: f64,
    pub continuity_residual: f64,
    pub fd_violation: f64,
}

/// Stopping rule and divergence guard shared by both solvers.
pub(crate) struct Monitor {
    history: VecDeque<f64>,
    start: Instant,
    ceiling: Option<f64>,
    record_elapsed: bool,
}

impl Monitor {
    pub(crate) fn new(record_elapsed: bool) -> Self {
        Self {
            history: VecDeque::with_capacity(WINDOW + 1),
            start: Instant::now(),
            ceiling: None,
            record_elapsed,
        }
    }

    pub(crate) fn elapsed(&self) -> f64 {
        if self.record_elapsed {
            self.start.elapsed().as_secs_f64()
        } else {
            0.0
        }
    }

    /// Fail on non-finite values or a runaway objective.
    pub(crate) fn guard(&mut self, iter: usize, objective: f64, others: &[f64]) -> Result<()> {
        if !objective.is_finite() || others.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("solver iterate"));
        }
        let ceiling = *self.ceiling.get_or_insert(BLOWUP * objective.abs().max(1.0));
        if objective > ceiling {
            return Err(Error::Diverged { iter, objective });
        }
        Ok(())
    }

    /// Push the objective and test the stopping rule.
    pub(crate) fn converged(&mut self, objective: f64, residual: f64, violation: f64, cfg: &SolverConfig) -> bool {
        self.history.push_back(objective);
        if self.history.len() > WINDOW + 1 {
            self.history.pop_front();
        }
        if self.history.len() <= WINDOW {
            return false;
        }
        let old = self.history[0];
        let change = (objective - old).abs() / objective.abs().max(f64::MIN_POSITIVE);
        change <= cfg.tol_obj && residual <= cfg.tol_feas && violation <= cfg.tol_feas
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid() {
        SolverConfig::default().validate().unwrap();
        let bad = SolverConfig {
            alpha: 0.0,
            ..SolverConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn window_must_fill_before_stopping() {
        let cfg = SolverConfig::default();
        let mut m = Monitor::new(false);
        for _ in 0..WINDOW {
            assert!(!m.converged(1.0, 0.0, 0.0, &cfg));
        }
        assert!(m.converged(1.0, 0.0, 0.0, &cfg));
        assert!(!m.converged(1.0, 1.0, 0.0, &cfg));
    }

    #[test]
    fn guard_rejects_blowup_and_nan() {
        let mut m = Monitor::new(false);
        m.guard(0, 2.0, &[]).unwrap();
        assert!(matches!(m.guard(1, 3e6, &[]), Err(Error::Diverged { .. })));
        assert!(m.guard(1, 1.0, &[f64::NAN]).is_err());
    }
}
