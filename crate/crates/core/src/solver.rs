//! The growing-horizon outer loop.
//!
//! Backward stages are computed in batches so the cumulative horizon runs
//! through `n_init, growth * n_init, growth^2 * n_init, ...`. After each batch
//! the first-stage policy is frozen and every feasible grid node is propagated
//! in closed loop for `ceil(N / 2)` steps. The horizon is accepted once
//!
//! * the first-stage policy differs from every stage policy computed in the
//!   second half of the batch by less than `eps_mu` on all surviving nodes, and
//! * all surviving closed-loop states lie within `eps_x` of their mean.
//!
//! Both comparisons are strict.

use std::time::{Duration, Instant};

use crate::dp::{forward_step_with, FeedbackPolicy, ForwardEnsemble, StageTable, TransitionModel};
use crate::error::{Error, Result};
use crate::grid::{CartesianGrid, NodeField};
use crate::par::Execution;
use crate::problem::ProblemDef;

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub eps_mu: Vec<f64>,
    pub eps_x: Vec<f64>,
    pub n_init: usize,
    pub n_max: usize,
    pub growth: usize,
    /// Closed-loop rollout length for the achieved average, as a multiple of
    /// the terminal horizon.
    pub average_rollout_factor: usize,
}

pub const DEFAULT_N_INIT: usize = 5;
pub const DEFAULT_N_MAX: usize = 10_000;
pub const DEFAULT_GROWTH: usize = 3;

impl SolverConfig {
    /// Tolerances of twice the grid spacing on every axis.
    pub fn for_grids(xgrid: &CartesianGrid, ugrid: &CartesianGrid) -> Self {
        Self {
            eps_mu: ugrid.spacings().iter().map(|d| 2.0 * d).collect(),
            eps_x: xgrid.spacings().iter().map(|d| 2.0 * d).collect(),
            n_init: DEFAULT_N_INIT,
            n_max: DEFAULT_N_MAX,
            growth: DEFAULT_GROWTH,
            average_rollout_factor: 10,
        }
    }

    pub fn validate(&self, state_dim: usize, control_dim: usize) -> Result<()> {
        if self.eps_mu.len() != control_dim {
            return Err(Error::Config(format!(
                "eps_mu has {} components, expected {control_dim}",
                self.eps_mu.len()
            )));
        }
        if self.eps_x.len() != state_dim {
            return Err(Error::Config(format!(
                "eps_x has {} components, expected {state_dim}",
                self.eps_x.len()
            )));
        }
        if let Some(e) = self.eps_mu.iter().chain(&self.eps_x).find(|e| !(**e > 0.0)) {
            return Err(Error::Config(format!("tolerances must be positive, got {e}")));
        }
        if self.n_init == 0 {
            return Err(Error::Config("n_init must be at least 1".into()));
        }
        if self.n_max < self.n_init {
            return Err(Error::Config(format!(
                "n_max ({}) must be at least n_init ({})",
                self.n_max, self.n_init
            )));
        }
        if self.growth < 2 {
            return Err(Error::Config(format!("growth must be at least 2, got {}", self.growth)));
        }
        if self.average_rollout_factor == 0 {
            return Err(Error::Config("average_rollout_factor must be at least 1".into()));
        }
        Ok(())
    }
}

/// Termination metrics of one tested horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceMetrics {
    pub horizon: usize,
    pub delta_mu: Vec<f64>,
    pub delta_x: Vec<f64>,
    /// Nodes still feasible after the forward phase.
    pub feasible_count: usize,
    /// Nodes with a feasible first-stage control before the forward phase.
    pub seeded_count: usize,
    pub mu_passed: bool,
    pub x_passed: bool,
}

impl ConvergenceMetrics {
    pub fn passed(&self) -> bool {
        self.mu_passed && self.x_passed
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Converged,
    HitNMax,
}

impl SolveStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            SolveStatus::Converged => "converged",
            SolveStatus::HitNMax => "hit_n_max",
        }
    }
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    pub status: SolveStatus,
    pub terminal_horizon: usize,
    pub first_stage_policy: StageTable,
    pub metrics: Vec<ConvergenceMetrics>,
    pub final_ensemble: ForwardEnsemble,
    /// Mean of `f_a` over the stationary tail of a closed-loop rollout from the
    /// terminal mean state; `None` when that rollout is infeasible.
    pub achieved_average: Option<f64>,
    pub wall_time: Duration,
    pub backward_time: Duration,
    pub forward_time: Duration,
}

impl SolveReport {
    pub fn converged(&self) -> bool {
        self.status == SolveStatus::Converged
    }
}

/// Largest per-axis deviation between the first-stage policy (`stages[N-1]`)
/// and each policy `stages[j-1]`, `j` in `ceil(N/2)..=N`, over `survivors`.
///
/// `stages` is in computation order: `stages[0]` is the first backward step.
/// Deviations are counted in control nodes and scaled by the spacing, so the
/// result is an exact multiple of it and the strict tolerance test is not
/// at the mercy of coordinate rounding.
pub fn delta_mu(stages: &[StageTable], survivors: &[usize], ugrid: &CartesianGrid) -> Result<Vec<f64>> {
    if survivors.is_empty() {
        return Err(Error::NoFeasibleInitial);
    }
    let n = stages.len();
    if n == 0 {
        return Err(Error::Usage("delta_mu needs at least one stage".into()));
    }
    let m = ugrid.dim();
    let first = &stages[n - 1];
    let mut steps = vec![0usize; m];
    for &x in survivors {
        let j0 = first.control_indices(x, ugrid).ok_or_else(|| {
            Error::Usage(format!("survivor {x} has no first-stage control"))
        })?;
        for stage in &stages[n.div_ceil(2) - 1..n] {
            match stage.control_indices(x, ugrid) {
                Some(j) => {
                    for i in 0..m {
                        steps[i] = steps[i].max(j0[i].abs_diff(j[i]));
                    }
                }
                None => return Ok(vec![f64::INFINITY; m]),
            }
        }
    }
    Ok(steps.iter().zip(ugrid.spacings()).map(|(&k, d)| k as f64 * d).collect())
}

/// Largest per-axis distance of a feasible ensemble state from the ensemble mean.
pub fn delta_x(ens: &ForwardEnsemble) -> Result<Vec<f64>> {
    let mean = ens.mean_state().ok_or(Error::NoFeasibleInitial)?;
    let mut out = vec![0.0f64; ens.dim()];
    for k in ens.feasible_indices() {
        for (i, v) in ens.state(k).iter().enumerate() {
            out[i] = out[i].max((v - mean[i]).abs());
        }
    }
    Ok(out)
}

/// Mean of `f_a` over the last `tail` of `horizon` closed-loop steps from `x0`.
pub fn achieved_average(
    p: &ProblemDef,
    xgrid: &CartesianGrid,
    ugrid: &CartesianGrid,
    policy: &StageTable,
    x0: &[f64],
    horizon: usize,
    tail: usize,
) -> Result<f64> {
    if tail > horizon || tail == 0 {
        return Err(Error::Usage(format!(
            "tail ({tail}) must be in 1..={horizon}"
        )));
    }
    let feedback = FeedbackPolicy::new(policy, ugrid);
    let mut x = x0.to_vec();
    let mut sum = 0.0;
    for k in 0..horizon {
        let (u, next) = feedback
            .apply(p, xgrid, &x)
            .map_err(|e| Error::RolloutInfeasible { step: k, reason: e.to_string() })?;
        if k >= horizon - tail {
            sum += p.average(&x, &u);
        }
        x = next;
    }
    Ok(sum / tail as f64)
}

/// Owns the transition model and the growing stack of stage tables.
pub struct Solver {
    problem: ProblemDef,
    model: TransitionModel,
    cfg: SolverConfig,
    cost: NodeField,
    stages: Vec<StageTable>,
}

impl Solver {
    pub fn new(p: &ProblemDef, xgrid: &CartesianGrid, ugrid: &CartesianGrid, cfg: SolverConfig) -> Result<Self> {
        Self::with_execution(p, xgrid, ugrid, cfg, Execution::default())
    }

    pub fn with_execution(
        p: &ProblemDef,
        xgrid: &CartesianGrid,
        ugrid: &CartesianGrid,
        cfg: SolverConfig,
        exec: Execution,
    ) -> Result<Self> {
        cfg.validate(p.state_dim, p.control_dim)?;
        let model = TransitionModel::build_with(p, xgrid, ugrid, exec)?;
        Ok(Self {
            problem: p.clone(),
            cost: NodeField::constant(xgrid.len(), 0.0),
            model,
            cfg,
            stages: Vec::new(),
        })
    }

    pub fn problem(&self) -> &ProblemDef {
        &self.problem
    }

    pub fn model(&self) -> &TransitionModel {
        &self.model
    }

    pub fn config(&self) -> &SolverConfig {
        &self.cfg
    }

    pub fn xgrid(&self) -> &CartesianGrid {
        self.model.xgrid()
    }

    pub fn ugrid(&self) -> &CartesianGrid {
        self.model.ugrid()
    }

    /// Stage tables in computation order (`stages()[0]` is the last stage in
    /// forward time of every horizon).
    pub fn stages(&self) -> &[StageTable] {
        &self.stages
    }

    pub fn horizon(&self) -> usize {
        self.stages.len()
    }

    /// Runs backward steps until the cumulative horizon reaches `n`.
    pub fn extend_to(&mut self, n: usize) {
        while self.stages.len() < n {
            let table = self.model.backward(&self.cost);
            self.cost = table.cost_to_go.clone();
            self.stages.push(table);
        }
    }

    /// The `n`-horizon policy sequence in forward time: element `k` is the
    /// policy applied at sample `k`.
    pub fn forward_policies(&mut self, n: usize) -> Vec<&StageTable> {
        self.extend_to(n);
        self.stages[..n].iter().rev().collect()
    }

    fn test_horizon(&self, n: usize) -> Result<(ConvergenceMetrics, ForwardEnsemble)> {
        let stages = &self.stages[..n];
        let first = &stages[n - 1];
        let seeded = first.feasible_count();
        if seeded == 0 {
            return Err(Error::InfeasibleProblem { horizon: n });
        }
        let policy = FeedbackPolicy::new(first, self.ugrid());
        let mut ens = ForwardEnsemble::seed(self.xgrid(), first);
        for _ in 0..n.div_ceil(2) {
            ens = forward_step_with(&self.problem, self.xgrid(), &policy, &ens, self.model.execution());
        }
        let survivors = ens.feasible_indices();
        let (dmu, dx) = if survivors.is_empty() {
            (
                vec![f64::INFINITY; self.ugrid().dim()],
                vec![f64::INFINITY; self.xgrid().dim()],
            )
        } else {
            (delta_mu(stages, &survivors, self.ugrid())?, delta_x(&ens)?)
        };
        let mu_passed = dmu.iter().zip(&self.cfg.eps_mu).all(|(d, e)| d < e);
        let x_passed = dx.iter().zip(&self.cfg.eps_x).all(|(d, e)| d < e);
        let metrics = ConvergenceMetrics {
            horizon: n,
            delta_mu: dmu,
            delta_x: dx,
            feasible_count: survivors.len(),
            seeded_count: seeded,
            mu_passed,
            x_passed,
        };
        Ok((metrics, ens))
    }

    pub fn run(&mut self) -> Result<SolveReport> {
        self.run_with_progress(|_| {})
    }

    /// Runs the outer loop, calling `progress` once per tested horizon.
    pub fn run_with_progress<F: FnMut(&ConvergenceMetrics)>(&mut self, mut progress: F) -> Result<SolveReport> {
        let start = Instant::now();
        let mut backward_time = Duration::ZERO;
        let mut forward_time = Duration::ZERO;
        let mut metrics = Vec::new();
        let mut n = self.cfg.n_init;
        let (status, ens) = loop {
            let t = Instant::now();
            self.extend_to(n);
            backward_time += t.elapsed();

            let t = Instant::now();
            let (m, ens) = self.test_horizon(n)?;
            forward_time += t.elapsed();
            progress(&m);
            let passed = m.passed();
            metrics.push(m);
            if passed {
                break (SolveStatus::Converged, ens);
            }
            match n.checked_mul(self.cfg.growth) {
                Some(next) if next <= self.cfg.n_max => n = next,
                _ => break (SolveStatus::HitNMax, ens),
            }
        };

        let first_stage_policy = self.stages[n - 1].clone();
        let achieved = ens.mean_state().and_then(|x0| {
            let horizon = self.cfg.average_rollout_factor * n;
            achieved_average(
                &self.problem,
                self.xgrid(),
                self.ugrid(),
                &first_stage_policy,
                &x0,
                horizon,
                n.div_ceil(4),
            )
            .ok()
        });
        Ok(SolveReport {
            status,
            terminal_horizon: n,
            first_stage_policy,
            metrics,
            final_ensemble: ens,
            achieved_average: achieved,
            wall_time: start.elapsed(),
            backward_time,
            forward_time,
        })
    }
}

/// Runs the full growing-horizon solve.
pub fn solve(
    p: &ProblemDef,
    xgrid: &CartesianGrid,
    ugrid: &CartesianGrid,
    cfg: &SolverConfig,
) -> Result<SolveReport> {
    Solver::new(p, xgrid, ugrid, cfg.clone())?.run()
}
