//! Near-optimal stationary state-feedback policies for undiscounted,
//! infinite-horizon, constrained nonlinear optimal control problems.
//!
//! The solver runs interpolating dynamic programming on Cartesian grids and
//! grows the horizon until the first-stage policy has stopped changing and
//! every feasible closed-loop trajectory has settled near a common state.
//!
//! Module map:
//!
//! * [`grid`]: Cartesian grids and multilinear interpolation.
//! * [`problem`]: the problem contract and the builtin pendulum problems.
//! * [`dp`]: one backward Bellman stage and one closed-loop forward step.
//! * [`solver`]: the growing-horizon solver and its termination metrics.
//! * [`reference`]: long-horizon reference solutions, rollouts, horizon sweeps.
//! * [`equilibrium`]: brute-force equilibrium search.

pub mod dp;
pub mod equilibrium;
pub mod error;
pub mod grid;
pub mod par;
pub mod problem;
pub mod reference;
pub mod solver;

pub use dp::{
    backward_step, feasible_indices, forward_step, BackwardRecursion, FeedbackPolicy, ForwardEnsemble,
    StageTable, TransitionModel,
};
pub use equilibrium::{equilibrium_search, EquilibriumPoint};
pub use error::{Error, Result};
pub use grid::{AxisSpec, CartesianGrid, NodeField};
pub use par::Execution;
pub use problem::{PendulumParams, ProblemDef};
pub use reference::{horizon_sweep, rollout_stationary, rollout_time_varying, RolloutTrace};
pub use solver::{solve, ConvergenceMetrics, SolveReport, SolveStatus, Solver, SolverConfig};
