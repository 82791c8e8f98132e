//! Fixed long-horizon reference solutions, closed-loop rollouts and the
//! cost-versus-problem-horizon sweep.

use crate::dp::{BackwardRecursion, FeedbackPolicy, StageTable, StepFailure, TransitionModel};
use crate::error::{Error, Result};
use crate::grid::CartesianGrid;
use crate::par::map_range;
use crate::problem::ProblemDef;
use crate::solver::{SolveReport, Solver};

/// One sample of a closed-loop trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutStep {
    pub state: Vec<f64>,
    pub control: Vec<f64>,
    pub cost: f64,
    pub relaxed_cost: f64,
    pub average: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RolloutTrace {
    pub steps: Vec<RolloutStep>,
    /// State after the last applied control (the initial state when empty).
    pub final_state: Vec<f64>,
    /// Set when the rollout stopped early.
    pub truncated: Option<(usize, StepFailure)>,
}

impl RolloutTrace {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Visited states including the final one.
    pub fn states(&self) -> impl Iterator<Item = &[f64]> {
        self.steps
            .iter()
            .map(|s| s.state.as_slice())
            .chain(std::iter::once(self.final_state.as_slice()))
    }

    pub fn summary(&self) -> TraceSummary {
        let n = self.steps.len();
        let sum = |f: fn(&RolloutStep) -> f64| self.steps.iter().map(f).sum::<f64>();
        let total_cost = sum(|s| s.cost);
        let total_relaxed = sum(|s| s.relaxed_cost);
        let total_average = sum(|s| s.average);
        let div = if n == 0 { f64::NAN } else { n as f64 };
        TraceSummary {
            steps: n,
            total_cost,
            mean_cost: total_cost / div,
            mean_relaxed_cost: total_relaxed / div,
            mean_average: total_average / div,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceSummary {
    pub steps: usize,
    pub total_cost: f64,
    pub mean_cost: f64,
    pub mean_relaxed_cost: f64,
    pub mean_average: f64,
}

fn rollout<'a, I>(p: &ProblemDef, xgrid: &CartesianGrid, policies: I, x0: &[f64]) -> Result<RolloutTrace>
where
    I: IntoIterator<Item = &'a FeedbackPolicy>,
{
    let mut x = x0.to_vec();
    let mut steps = Vec::new();
    let mut truncated = None;
    for (k, policy) in policies.into_iter().enumerate() {
        match policy.apply(p, xgrid, &x) {
            Ok((u, next)) => {
                steps.push(RolloutStep {
                    cost: p.cost(&x, &u),
                    relaxed_cost: p.relaxed_cost(&x, &u),
                    average: p.average(&x, &u),
                    state: std::mem::replace(&mut x, next),
                    control: u,
                });
            }
            Err(e) if k == 0 => {
                return Err(Error::RolloutInfeasible { step: 0, reason: e.to_string() })
            }
            Err(e) => {
                truncated = Some((k, e));
                break;
            }
        }
    }
    Ok(RolloutTrace { steps, final_state: x, truncated })
}

/// Applies `policies[k]` at sample `k` (forward-time order) starting from `x0`.
pub fn rollout_time_varying(
    p: &ProblemDef,
    xgrid: &CartesianGrid,
    ugrid: &CartesianGrid,
    policies: &[&StageTable],
    x0: &[f64],
) -> Result<RolloutTrace> {
    let feedback: Vec<FeedbackPolicy> = policies.iter().map(|t| FeedbackPolicy::new(t, ugrid)).collect();
    rollout(p, xgrid, &feedback, x0)
}

/// Applies one stationary policy for `horizon` samples.
pub fn rollout_stationary(
    p: &ProblemDef,
    xgrid: &CartesianGrid,
    ugrid: &CartesianGrid,
    policy: &StageTable,
    x0: &[f64],
    horizon: usize,
) -> Result<RolloutTrace> {
    let feedback = FeedbackPolicy::new(policy, ugrid);
    rollout(p, xgrid, std::iter::repeat(&feedback).take(horizon), x0)
}

/// Policies of the `n`-horizon problem in forward-time order (element 0 is
/// the first-stage policy).
pub fn finite_horizon_policies(
    p: &ProblemDef,
    xgrid: &CartesianGrid,
    ugrid: &CartesianGrid,
    n: usize,
) -> Result<Vec<StageTable>> {
    if n == 0 {
        return Err(Error::Usage("reference horizon must be at least 1".into()));
    }
    let model = TransitionModel::build(p, xgrid, ugrid)?;
    let mut rec = BackwardRecursion::new(&model);
    let mut stages: Vec<StageTable> = (0..n).map(|_| rec.step()).collect();
    stages.reverse();
    Ok(stages)
}

/// UCPADP closed loop versus the time-varying long-horizon reference, both
/// from the same initial state and over the reference horizon.
#[derive(Debug, Clone)]
pub struct Comparison {
    pub reference_horizon: usize,
    pub ucpadp: RolloutTrace,
    pub reference: RolloutTrace,
}

impl Comparison {
    /// `|a - b| / |b|` of the mean stage cost (reference in the denominator).
    pub fn cost_deviation(&self) -> f64 {
        relative_deviation(self.ucpadp.summary().mean_cost, self.reference.summary().mean_cost)
    }

    pub fn relaxed_cost_deviation(&self) -> f64 {
        relative_deviation(
            self.ucpadp.summary().mean_relaxed_cost,
            self.reference.summary().mean_relaxed_cost,
        )
    }
}

pub fn relative_deviation(value: f64, reference: f64) -> f64 {
    if value == reference {
        0.0
    } else {
        (value - reference).abs() / reference.abs()
    }
}

/// Extends `solver` to `multiplier * terminal_horizon` stages and compares
/// the stationary UCPADP policy against the time-varying reference from `x0`.
pub fn compare(solver: &mut Solver, report: &SolveReport, multiplier: usize, x0: &[f64]) -> Result<Comparison> {
    if multiplier == 0 {
        return Err(Error::Config("reference multiplier must be at least 1".into()));
    }
    let horizon = multiplier * report.terminal_horizon;
    let p = solver.problem().clone();
    let xgrid = solver.xgrid().clone();
    let ugrid = solver.ugrid().clone();
    let ucpadp = rollout_stationary(&p, &xgrid, &ugrid, &report.first_stage_policy, x0, horizon)?;
    let policies = solver.forward_policies(horizon);
    let reference = rollout_time_varying(&p, &xgrid, &ugrid, &policies, x0)?;
    Ok(Comparison { reference_horizon: horizon, ucpadp, reference })
}

/// Average relaxed cost per initial node for one problem horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub horizon: usize,
    /// `(initial node, average relaxed cost over the trajectory horizon)`.
    pub costs: Vec<(usize, f64)>,
    /// Initial nodes whose closed loop became infeasible under this policy.
    pub excluded: usize,
}

impl SweepRow {
    pub fn min(&self) -> f64 {
        self.costs.iter().map(|c| c.1).fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.costs.iter().map(|c| c.1).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn mean(&self) -> f64 {
        self.costs.iter().map(|c| c.1).sum::<f64>() / self.costs.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepTable {
    pub trajectory_horizon: usize,
    /// Nodes with a feasible solution of the trajectory-horizon problem.
    pub initial_nodes: Vec<usize>,
    pub rows: Vec<SweepRow>,
}

/// For each problem horizon `N`, applies the stationary first-stage policy of
/// the `N`-horizon problem for `trajectory_horizon` samples from every node
/// that is feasible for the trajectory-horizon problem.
pub fn horizon_sweep(
    p: &ProblemDef,
    xgrid: &CartesianGrid,
    ugrid: &CartesianGrid,
    problem_horizons: &[usize],
    trajectory_horizon: usize,
) -> Result<SweepTable> {
    let model = TransitionModel::build(p, xgrid, ugrid)?;
    horizon_sweep_with(p, &model, problem_horizons, trajectory_horizon)
}

pub fn horizon_sweep_with(
    p: &ProblemDef,
    model: &TransitionModel,
    problem_horizons: &[usize],
    trajectory_horizon: usize,
) -> Result<SweepTable> {
    check_sweep_args(problem_horizons, trajectory_horizon)?;
    let mut rec = BackwardRecursion::new(model);
    let mut captured: Vec<(usize, StageTable)> = Vec::new();
    let mut last = None;
    while rec.horizon() < trajectory_horizon {
        let table = rec.step();
        if problem_horizons.contains(&rec.horizon()) {
            captured.push((rec.horizon(), table.clone()));
        }
        last = Some(table);
    }
    let long = last.expect("trajectory horizon is positive");
    let tables: Vec<(usize, &StageTable)> = problem_horizons
        .iter()
        .map(|&h| (h, &captured.iter().find(|(n, _)| *n == h).expect("captured").1))
        .collect();
    sweep_rows(p, model, &tables, &long, trajectory_horizon)
}

fn check_sweep_args(problem_horizons: &[usize], trajectory_horizon: usize) -> Result<()> {
    if problem_horizons.is_empty() {
        return Err(Error::Usage("horizon list is empty".into()));
    }
    if let Some(&h) = problem_horizons.iter().find(|&&h| h == 0) {
        return Err(Error::Usage(format!("problem horizon must be positive, got {h}")));
    }
    let longest = *problem_horizons.iter().max().expect("non-empty");
    if trajectory_horizon < longest {
        return Err(Error::Usage(format!(
            "trajectory horizon {trajectory_horizon} is shorter than problem horizon {longest}"
        )));
    }
    Ok(())
}

/// Same as [`horizon_sweep_with`], reusing (and extending) the stage stack
/// of `solver`.
pub fn horizon_sweep_solver(
    solver: &mut Solver,
    problem_horizons: &[usize],
    trajectory_horizon: usize,
) -> Result<SweepTable> {
    check_sweep_args(problem_horizons, trajectory_horizon)?;
    solver.extend_to(trajectory_horizon);
    let stages = solver.stages();
    let tables: Vec<(usize, &StageTable)> = problem_horizons.iter().map(|&h| (h, &stages[h - 1])).collect();
    sweep_rows(solver.problem(), solver.model(), &tables, &stages[trajectory_horizon - 1], trajectory_horizon)
}

fn sweep_rows(
    p: &ProblemDef,
    model: &TransitionModel,
    tables: &[(usize, &StageTable)],
    long: &StageTable,
    trajectory_horizon: usize,
) -> Result<SweepTable> {
    let xgrid = model.xgrid();
    let ugrid = model.ugrid();
    let initial_nodes: Vec<usize> = (0..xgrid.len()).filter(|&k| long.is_feasible(k)).collect();
    if initial_nodes.is_empty() {
        return Err(Error::InfeasibleProblem { horizon: trajectory_horizon });
    }

    let mut rows = Vec::with_capacity(tables.len());
    for &(h, table) in tables {
        let feedback = FeedbackPolicy::new(table, ugrid);
        let results = map_range(model.execution(), initial_nodes.len(), |i| {
            let x0 = xgrid.node_coord(initial_nodes[i]).expect("node index in range");
            let mut x = x0;
            let mut sum = 0.0;
            for _ in 0..trajectory_horizon {
                let (u, next) = feedback.apply(p, xgrid, &x).ok()?;
                sum += p.relaxed_cost(&x, &u);
                x = next;
            }
            Some(sum / trajectory_horizon as f64)
        });
        let costs: Vec<(usize, f64)> = initial_nodes
            .iter()
            .zip(results)
            .filter_map(|(&k, c)| c.map(|c| (k, c)))
            .collect();
        rows.push(SweepRow { horizon: h, excluded: initial_nodes.len() - costs.len(), costs });
    }
    Ok(SweepTable { trajectory_horizon, initial_nodes, rows })
}
