//! Consensus Douglas–Rachford splitting.
//!
//! Each block `b` keeps an auxiliary copy `z_b`. One iteration forms the
//! average `x̄`, applies the block operator to the reflection `2x̄ − z_b` and
//! moves `z_b` by `x_b − x̄`. The blocks are the kinetic prox, the continuity
//! projection, the capacity projection and, with obstacles, the mask.

use crate::continuity::{
    continuity_residual, project_continuity_weighted, project_weighted, ContinuityProjector, PoissonBackend,
};
use crate::diagram::{max_violation, DiagramField};
use crate::error::Result;
use crate::grid::TransportState;
use crate::problems::{initialize, ProblemSpec};
use crate::prox::{objective, ObstacleMask};
use crate::solver::cellwise::{self, CellOp};
use crate::solver::{ConvergenceRecord, Monitor, SolveOutput, SolverConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Block {
    Kinetic,
    Continuity,
    Capacity,
    Obstacle,
}

#[derive(Clone, Debug)]
pub struct DrsState {
    /// One auxiliary copy per entry of [`DrsSolver::blocks`].
    pub z: Vec<TransportState>,
    /// Consensus average used by the latest step.
    pub x_bar: TransportState,
    /// Output of the kinetic block in the latest step.
    pub x_kinetic: TransportState,
    pub alpha: f64,
}

pub struct DrsSolver {
    problem: ProblemSpec,
    config: SolverConfig,
    field: DiagramField,
    blocks: Vec<Block>,
    state: DrsState,
    pinned: TransportState,
    projector: ContinuityProjector,
    iter: usize,
}

impl DrsSolver {
    /// Validate the problem and set every copy to the initial interpolation.
    pub fn new(problem: &ProblemSpec, config: &SolverConfig) -> Result<Self> {
        config.validate()?;
        problem.check()?;
        let grid = &problem.grid;
        let rhs = problem.rhs()?;
        let projector = ContinuityProjector::new(grid, rhs, PoissonBackend::Spectral, None)?;
        let mut blocks = vec![Block::Kinetic, Block::Continuity, Block::Capacity];
        if problem.mask.is_some() && !config.fuse_obstacles {
            blocks.push(Block::Obstacle);
        }
        let x0 = initialize(problem);
        let state = DrsState {
            z: vec![x0.clone(); blocks.len()],
            x_bar: x0.clone(),
            x_kinetic: x0.clone(),
            alpha: config.alpha,
        };
        Ok(Self {
            field: problem.effective_diagram(),
            problem: problem.clone(),
            config: config.clone(),
            blocks,
            state,
            pinned: problem.pinned_state(),
            projector,
            iter: 0,
        })
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn state(&self) -> &DrsState {
        &self.state
    }

    /// Replace every auxiliary copy by `x`.
    pub fn set_state(&mut self, x: &TransportState) -> Result<()> {
        x.check_shape(&self.problem.grid)?;
        x.expect_layout(self.problem.layout)?;
        for z in self.state.z.iter_mut() {
            z.clone_from(x);
        }
        Ok(())
    }

    pub fn iterations(&self) -> usize {
        self.iter
    }

    fn average(&self) -> TransportState {
        let mut x = self.state.z[0].clone();
        for z in &self.state.z[1..] {
            x.axpy(1.0, z);
        }
        x.scale(1.0 / self.state.z.len() as f64);
        x.copy_pinned_from(&self.pinned);
        x
    }

    fn mask(&self) -> Option<&ObstacleMask> {
        self.problem.mask.as_ref()
    }

    fn apply_mask(&self, x: &mut TransportState) {
        if let Some(mask) = self.mask() {
            mask.apply_in_place(x);
            x.copy_pinned_from(&self.pinned);
        }
    }

    fn apply_block(&mut self, block: Block, x: &mut TransportState) -> Result<()> {
        let grid = &self.problem.grid;
        match block {
            Block::Kinetic => {
                cellwise::apply(
                    CellOp::Kinetic {
                        alpha: self.state.alpha,
                    },
                    x,
                    grid,
                )?;
                if self.config.fuse_obstacles {
                    self.apply_mask(x);
                }
            }
            Block::Continuity => self.projector.project_in_place(x)?,
            Block::Capacity => cellwise::apply(CellOp::Capacity { field: &self.field }, x, grid)?,
            Block::Obstacle => self.apply_mask(x),
        }
        x.copy_pinned_from(&self.pinned);
        Ok(())
    }

    /// One consensus iteration.
    pub fn step(&mut self) -> Result<()> {
        let x_bar = self.average();
        for b in 0..self.blocks.len() {
            let mut v = x_bar.clone();
            v.lincomb(2.0, -1.0, &self.state.z[b]);
            self.apply_block(self.blocks[b], &mut v)?;
            let z = &mut self.state.z[b];
            z.axpy(1.0, &v);
            z.axpy(-1.0, &x_bar);
            if self.blocks[b] == Block::Kinetic {
                self.state.x_kinetic = v;
            }
        }
        self.state.x_bar = x_bar;
        self.iter += 1;
        Ok(())
    }

    /// Reported solution, built from the kinetic block output `x_J` (which
    /// keeps empty cells empty); see [`report`].
    pub fn report(&self) -> Result<TransportState> {
        report(&self.problem, &self.field, self.state.x_kinetic.clone())
    }

    /// Iterate until the stopping rule holds or `max_iters` is reached.
    pub fn run(mut self, mut sink: impl FnMut(&ConvergenceRecord)) -> Result<SolveOutput> {
        let grid = self.problem.grid.clone();
        let rhs = self.projector.rhs().clone();
        let mut monitor = Monitor::new(self.config.record_elapsed);
        let mut log = Vec::new();
        let mut prev = self.average();
        let mut converged = false;
        while self.iter < self.config.max_iters {
            self.step()?;
            let x_bar = &self.state.x_bar;
            let obj = objective(&self.state.x_kinetic, &grid)?;
            let res = continuity_residual(x_bar, &rhs, &grid)?;
            let viol = max_violation(&self.field, x_bar, &grid)?;
            let change = x_bar.distance(&prev, &grid);
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
                    ergodic_objective: None,
                };
                sink(&rec);
                log.push(rec);
            }
            prev.clone_from(x_bar);
            if done {
                converged = true;
                break;
            }
        }
        let solution = self.report()?;
        finish(&self.problem, &self.field, solution, log, self.iter, converged)
    }
}

/// Density scale of the weighted continuity projection used for reporting.
const REPORT_KAPPA: f64 = 1e-3;
/// Relative CG tolerance of the intermediate continuity projections.
const REPORT_CG_LOOSE: f64 = 1e-3;
/// Cap on the alternating capacity/continuity rounds of [`report`].
const REPORT_ROUNDS: usize = 1000;

/// Reported solution: mask, then alternate the capacity projection and the
/// density-weighted continuity projection until the capacity step no longer
/// moves the state. The last operation is always a continuity projection, so
/// the result satisfies `K x = y` and conserves mass exactly.
pub(crate) fn report(problem: &ProblemSpec, field: &DiagramField, mut x: TransportState) -> Result<TransportState> {
    let grid = &problem.grid;
    let pinned = problem.pinned_state();
    if let Some(mask) = &problem.mask {
        mask.apply_in_place(&mut x);
        x.copy_pinned_from(&pinned);
    }
    let rhs = problem.rhs()?;
    let mask = problem.mask.as_ref();
    for round in 0..REPORT_ROUNDS {
        let before = x.clone();
        cellwise::apply(CellOp::Capacity { field }, &mut x, grid)?;
        if round > 0 && x.distance(&before, grid) <= 1e-13 * (1.0 + x.norm(grid)) {
            x = before;
            break;
        }
        x = project_weighted(&x, &rhs, grid, REPORT_KAPPA, mask, REPORT_CG_LOOSE)?;
        x.copy_pinned_from(&pinned);
    }
    let mut x = project_continuity_weighted(&x, &rhs, grid, REPORT_KAPPA, mask)?;
    x.copy_pinned_from(&pinned);
    Ok(x)
}

pub(crate) fn finish(
    problem: &ProblemSpec,
    field: &DiagramField,
    solution: TransportState,
    log: Vec<ConvergenceRecord>,
    iterations: usize,
    converged: bool,
) -> Result<SolveOutput> {
    let grid = &problem.grid;
    Ok(SolveOutput {
        objective: objective(&solution, grid)?,
        continuity_residual: continuity_residual(&solution, &problem.rhs()?, grid)?,
        fd_violation: max_violation(field, &solution, grid)?,
        solution,
        log,
        iterations,
        converged,
    })
}

/// Run consensus Douglas–Rachford splitting on `problem`.
pub fn run_drs(problem: &ProblemSpec, config: &SolverConfig) -> Result<SolveOutput> {
    DrsSolver::new(problem, config)?.run(|_| {})
}
