//! Dynamic optimal transport under fundamental-diagram capacity constraints.
//!
//! Densities `ρ` and momenta `m` on a uniform space–time lattice minimize the
//! kinetic energy `Σ ‖m‖²/(2ρ)` subject to the discrete continuity equation,
//! prescribed initial and terminal densities, and the congestion cap
//! `‖m‖ ≤ Q(ρ)`. Two first-order solvers are provided: consensus
//! Douglas–Rachford splitting ([`solver::drs`]) and Chambolle–Pock
//! ([`solver::cp`]).

pub mod continuity;
pub mod cubic;
pub mod diagram;
pub mod error;
pub mod grid;
pub mod point;
pub mod problems;
pub mod prox;
mod search;
pub mod solver;

pub use continuity::{
    continuity_residual, project_continuity, solve_poisson, solve_poisson_cg, ContinuityProjector, ContinuityRhs,
    PoissonBackend,
};
pub use diagram::{max_violation, project_fd, DiagramField, Family, FundamentalDiagram};
pub use error::{Error, Result};
pub use grid::{
    adjoint_divergence, divergence, estimate_operator_norm, midpoint_average, DualField, Grid, Layout, TransportState,
};
pub use point::PointState;
pub use problems::{initialize, validate, Diagnostic, Mode, ProblemSpec, Severity};
pub use prox::{apply_obstacle, objective, prox_kinetic, prox_kinetic_fd, ObstacleMask};
pub use solver::cp::{run_cp, CpSolver};
pub use solver::drs::{run_drs, DrsSolver};
pub use solver::{ConvergenceRecord, SolveOutput, SolverConfig};
