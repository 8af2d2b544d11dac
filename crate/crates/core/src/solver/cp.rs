//! Chambolle–Pock primal–dual iteration for
//! `min f(x) + ι{K_f x = y}` with `f` the kinetic energy plus the capacity
//! indicator.

use crate::continuity::{continuity_residual, continuity_source, ContinuityRhs};
use crate::diagram::{max_violation, DiagramField};
use crate::error::{Error, Result};
use crate::grid::{estimate_operator_norm_seeded, free_adjoint, DualField, TransportState};
use crate::problems::{initialize, ProblemSpec};
use crate::prox::objective;
use crate::solver::cellwise::{self, CellOp};
use crate::solver::drs::{finish, report};
use crate::solver::{ConvergenceRecord, Monitor, SolveOutput, SolverConfig};

/// Default step scale: `τ = σ = STEP_SCALE/‖K‖`.
const STEP_SCALE: f64 = 0.95;

#[derive(Clone, Debug)]
pub struct CpState {
    pub x: TransportState,
    pub x_bar: TransportState,
    pub phi: DualField,
    pub tau: f64,
    pub sigma: f64,
}

pub struct CpSolver {
    problem: ProblemSpec,
    config: SolverConfig,
    field: DiagramField,
    rhs: ContinuityRhs,
    state: CpState,
    pinned: TransportState,
    ergodic_sum: TransportState,
    operator_norm: f64,
    iter: usize,
}

impl CpSolver {
    /// Validate the problem, estimate `‖K‖` and check `τσ‖K‖² < 1`.
    pub fn new(problem: &ProblemSpec, config: &SolverConfig) -> Result<Self> {
        config.validate()?;
        problem.check()?;
        let grid = &problem.grid;
        let norm = estimate_operator_norm_seeded(grid, problem.layout, config.norm_iters, config.seed);
        let tau = config.tau.unwrap_or(STEP_SCALE / norm);
        let sigma = config.sigma.unwrap_or(STEP_SCALE / norm);
        if tau * sigma * norm * norm >= 1.0 {
            return Err(Error::InvalidParameter(format!(
                "step condition violated: tau*sigma*|K|^2 = {:.4} >= 1",
                tau * sigma * norm * norm
            )));
        }
        let x0 = initialize(problem);
        Ok(Self {
            field: problem.effective_diagram(),
            rhs: problem.rhs()?,
            state: CpState {
                x: x0.clone(),
                x_bar: x0.clone(),
                phi: DualField::zeros(grid, problem.layout),
                tau,
                sigma,
            },
            pinned: problem.pinned_state(),
            ergodic_sum: TransportState::zeros(grid, problem.layout),
            operator_norm: norm,
            problem: problem.clone(),
            config: config.clone(),
            iter: 0,
        })
    }

    pub fn state(&self) -> &CpState {
        &self.state
    }

    pub fn operator_norm(&self) -> f64 {
        self.operator_norm
    }

    pub fn iterations(&self) -> usize {
        self.iter
    }

    /// Replace the primal iterate (and its extrapolation) by `x`.
    pub fn set_primal(&mut self, x: &TransportState) -> Result<()> {
        x.check_shape(&self.problem.grid)?;
        x.expect_layout(self.problem.layout)?;
        self.state.x.clone_from(x);
        self.state.x_bar.clone_from(x);
        Ok(())
    }

    /// Running average of the primal iterates.
    pub fn ergodic(&self) -> TransportState {
        let mut x = self.ergodic_sum.clone();
        x.scale(1.0 / self.iter.max(1) as f64);
        x
    }

    /// One primal–dual iteration.
    pub fn step(&mut self) -> Result<()> {
        let grid = &self.problem.grid;
        let layout = self.problem.layout;
        let s = &mut self.state;
        let source = continuity_source(&s.x_bar, &self.rhs, grid)?;
        s.phi.phi.scaled_add(s.sigma, &source);

        let mut x_new = s.x.clone();
        x_new.axpy(-s.tau, &free_adjoint(&s.phi, grid, layout)?);
        let op = CellOp::KineticCapacity {
            tau: s.tau,
            field: &self.field,
        };
        cellwise::apply(op, &mut x_new, grid)?;
        if let Some(mask) = &self.problem.mask {
            mask.apply_in_place(&mut x_new);
        }
        x_new.copy_pinned_from(&self.pinned);

        s.x_bar.clone_from(&x_new);
        s.x_bar.lincomb(2.0, -1.0, &s.x);
        s.x = x_new;
        self.ergodic_sum.axpy(1.0, &s.x);
        self.iter += 1;
        Ok(())
    }

    pub fn report(&self) -> Result<TransportState> {
        report(&self.problem, &self.field, self.state.x.clone())
    }

    /// Iterate until the stopping rule holds or `max_iters` is reached.
    pub fn run(mut self, mut sink: impl FnMut(&ConvergenceRecord)) -> Result<SolveOutput> {
        let grid = self.problem.grid.clone();
        let mut monitor = Monitor::new(self.config.record_elapsed);
        let mut log = Vec::new();
        let mut converged = false;
        while self.iter < self.config.max_iters {
            let prev = self.state.x.clone();
            self.step()?;
            let x = &self.state.x;
            let obj = objective(x, &grid)?;
            let res = continuity_residual(x, &self.rhs, &grid)?;
            let viol = max_violation(&self.field, x, &grid)?;
            let change = x.distance(&prev, &grid);
            monitor.guard(self.iter, obj, &[res, viol, change])?;
            let done = monitor.converged(obj, res, viol, &self.config);
            if self.iter.is_multiple_of(self.config.log_every) || done || self.iter == self.config.max_iters {
                let rec = ConvergenceRecord {
                    iter: self.iter,
                    objective: obj,
                    continuity_residual: res,
                    fd_violation: viol,
                    step_change: change,
                    elapsed: monitor.elapsed(),
                    ergodic_objective: Some(objective(&self.ergodic(), &grid)?),
                };
                sink(&rec);
                log.push(rec);
            }
            if done {
                converged = true;
                break;
            }
        }
        let solution = self.report()?;
        finish(&self.problem, &self.field, solution, log, self.iter, converged)
    }
}

/// Run Chambolle–Pock on `problem`.
pub fn run_cp(problem: &ProblemSpec, config: &SolverConfig) -> Result<SolveOutput> {
    CpSolver::new(problem, config)?.run(|_| {})
}
