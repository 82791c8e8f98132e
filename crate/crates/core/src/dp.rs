//! One-step backward Bellman recursion and one-step closed-loop forward
//! propagation on a gridded state space.
//!
//! The dynamics, constraints and stage cost do not depend on the stage, so a
//! [`TransitionModel`] evaluates them once for every `(state node, control
//! node)` pair and stores the successor's interpolation cell. Each backward
//! step is then a pure table lookup.

use crate::error::Result;
use crate::grid::{CartesianGrid, CellRef, NodeField};
use crate::par::{map_range, Execution};
use crate::problem::ProblemDef;

/// Marker for "no admissible control" in a policy table.
pub const INFEASIBLE: u32 = u32::MAX;

/// Cost-to-go and argmin control of one backward stage.
///
/// `cost_to_go` is cumulative (not divided by the horizon). The policy holds
/// the flat row-major index of the chosen control node, or [`INFEASIBLE`].
#[derive(Debug, Clone, PartialEq)]
pub struct StageTable {
    pub cost_to_go: NodeField,
    pub policy: Vec<u32>,
}

impl StageTable {
    pub fn len(&self) -> usize {
        self.policy.len()
    }

    pub fn is_empty(&self) -> bool {
        self.policy.is_empty()
    }

    pub fn is_feasible(&self, node: usize) -> bool {
        self.policy[node] != INFEASIBLE
    }

    pub fn control_index(&self, node: usize) -> Option<usize> {
        match self.policy[node] {
            INFEASIBLE => None,
            i => Some(i as usize),
        }
    }

    /// Per-axis control node indices at `node`.
    pub fn control_indices(&self, node: usize, ugrid: &CartesianGrid) -> Option<Vec<usize>> {
        self.control_index(node)
            .map(|i| ugrid.node_indices(i).expect("stored control index is valid"))
    }

    /// Control coordinates at `node`.
    pub fn control(&self, node: usize, ugrid: &CartesianGrid) -> Option<Vec<f64>> {
        self.control_index(node)
            .map(|i| ugrid.node_coord(i).expect("stored control index is valid"))
    }

    pub fn feasible_count(&self) -> usize {
        self.policy.iter().filter(|&&p| p != INFEASIBLE).count()
    }
}

/// Precomputed successor cells and relaxed stage costs for every
/// `(state node, control node)` pair.
#[derive(Debug, Clone)]
pub struct TransitionModel {
    xgrid: CartesianGrid,
    ugrid: CartesianGrid,
    /// Lower corner of the successor cell, [`INFEASIBLE`] when `g > 0` or the
    /// successor leaves the grid box.
    base: Vec<u32>,
    fracs: Vec<f64>,
    cost: Vec<f64>,
    exec: Execution,
}

impl TransitionModel {
    pub fn build(p: &ProblemDef, xgrid: &CartesianGrid, ugrid: &CartesianGrid) -> Result<Self> {
        Self::build_with(p, xgrid, ugrid, Execution::default())
    }

    pub fn build_with(
        p: &ProblemDef,
        xgrid: &CartesianGrid,
        ugrid: &CartesianGrid,
        exec: Execution,
    ) -> Result<Self> {
        p.check_grids(xgrid, ugrid)?;
        let n = xgrid.dim();
        let nu = ugrid.len();
        let rows = map_range(exec, xgrid.len(), |k| {
            let x = xgrid.node_coord(k).expect("node index in range");
            let mut base = Vec::with_capacity(nu);
            let mut fracs = vec![0.0; nu * n];
            let mut cost = Vec::with_capacity(nu);
            let mut u = vec![0.0; ugrid.dim()];
            for j in 0..nu {
                ugrid.write_node_coord(j, &mut u).expect("node index in range");
                let cell = if p.admissible(&x, &u) {
                    let next = p.step(&x, &u);
                    xgrid.locate_into(&next, &mut fracs[j * n..(j + 1) * n])
                } else {
                    None
                };
                match cell {
                    Some(b) => {
                        base.push(b as u32);
                        cost.push(p.relaxed_cost(&x, &u));
                    }
                    None => {
                        base.push(INFEASIBLE);
                        cost.push(f64::INFINITY);
                    }
                }
            }
            (base, fracs, cost)
        });
        let pairs = xgrid.len() * nu;
        let mut model = Self {
            xgrid: xgrid.clone(),
            ugrid: ugrid.clone(),
            base: Vec::with_capacity(pairs),
            fracs: Vec::with_capacity(pairs * n),
            cost: Vec::with_capacity(pairs),
            exec,
        };
        for (b, f, c) in rows {
            model.base.extend(b);
            model.fracs.extend(f);
            model.cost.extend(c);
        }
        Ok(model)
    }

    pub fn with_execution(mut self, exec: Execution) -> Self {
        self.exec = exec;
        self
    }

    pub fn execution(&self) -> Execution {
        self.exec
    }

    pub fn xgrid(&self) -> &CartesianGrid {
        &self.xgrid
    }

    pub fn ugrid(&self) -> &CartesianGrid {
        &self.ugrid
    }

    /// Largest `|f_cR|` over admissible pairs.
    pub fn max_abs_cost(&self) -> f64 {
        self.cost
            .iter()
            .filter(|c| c.is_finite())
            .fold(0.0, |m, c| m.max(c.abs()))
    }

    /// One Bellman stage: minimizes stage cost plus interpolated `prev` over
    /// all control nodes, ties going to the smallest control index.
    pub fn backward(&self, prev: &NodeField) -> StageTable {
        assert_eq!(prev.len(), self.xgrid.len(), "cost-to-go does not match state grid");
        let n = self.xgrid.dim();
        let nu = self.ugrid.len();
        let prev = prev.values();
        let best = map_range(self.exec, self.xgrid.len(), |k| {
            let mut best = f64::INFINITY;
            let mut arg = INFEASIBLE;
            for j in 0..nu {
                let pair = k * nu + j;
                let base = self.base[pair];
                if base == INFEASIBLE {
                    continue;
                }
                let cell = CellRef {
                    base: base as usize,
                    fracs: &self.fracs[pair * n..(pair + 1) * n],
                };
                let tail = self.xgrid.blend(prev, cell);
                if !tail.is_finite() {
                    continue;
                }
                let total = self.cost[pair] + tail;
                if total < best {
                    best = total;
                    arg = j as u32;
                }
            }
            (best, arg)
        });
        let (cost, policy): (Vec<f64>, Vec<u32>) = best.into_iter().unzip();
        StageTable { cost_to_go: NodeField::new(cost), policy }
    }
}

/// One backward Bellman step from cost-to-go `prev`.
///
/// Builds a [`TransitionModel`] on every call; repeated stages should reuse
/// one model through [`BackwardRecursion`].
pub fn backward_step(
    p: &ProblemDef,
    xgrid: &CartesianGrid,
    ugrid: &CartesianGrid,
    prev: &NodeField,
) -> Result<StageTable> {
    Ok(TransitionModel::build(p, xgrid, ugrid)?.backward(prev))
}

/// Chained backward steps starting from a zero cost-to-go.
#[derive(Debug, Clone)]
pub struct BackwardRecursion<'a> {
    model: &'a TransitionModel,
    cost: NodeField,
    horizon: usize,
}

impl<'a> BackwardRecursion<'a> {
    pub fn new(model: &'a TransitionModel) -> Self {
        Self {
            model,
            cost: NodeField::constant(model.xgrid().len(), 0.0),
            horizon: 0,
        }
    }

    /// Number of stages computed so far.
    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn cost_to_go(&self) -> &NodeField {
        &self.cost
    }

    pub fn model(&self) -> &'a TransitionModel {
        self.model
    }

    pub fn step(&mut self) -> StageTable {
        let table = self.model.backward(&self.cost);
        self.cost = table.cost_to_go.clone();
        self.horizon += 1;
        table
    }
}

/// A stage policy prepared for evaluation at arbitrary states: one field of
/// control coordinates per control axis, `+inf` at infeasible nodes.
#[derive(Debug, Clone)]
pub struct FeedbackPolicy {
    controls: Vec<NodeField>,
}

/// Why a closed-loop step was rejected.
#[derive(Debug, Clone, PartialEq)]
pub enum StepFailure {
    PolicyInfeasible,
    ConstraintViolated,
    LeftDomain,
}

impl std::fmt::Display for StepFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            StepFailure::PolicyInfeasible => "policy interpolation touches an infeasible node",
            StepFailure::ConstraintViolated => "inequality constraint violated",
            StepFailure::LeftDomain => "successor state left the state grid",
        };
        f.write_str(s)
    }
}

impl FeedbackPolicy {
    pub fn new(table: &StageTable, ugrid: &CartesianGrid) -> Self {
        let m = ugrid.dim();
        let mut controls = vec![Vec::with_capacity(table.len()); m];
        let mut u = vec![0.0; m];
        for k in 0..table.len() {
            match table.control_index(k) {
                Some(i) => {
                    ugrid.write_node_coord(i, &mut u).expect("stored control index is valid");
                    for a in 0..m {
                        controls[a].push(u[a]);
                    }
                }
                None => controls.iter_mut().for_each(|c| c.push(f64::INFINITY)),
            }
        }
        Self { controls: controls.into_iter().map(NodeField::new).collect() }
    }

    /// Interpolated control at `x`, or `None` when out of domain or touching
    /// an infeasible node.
    pub fn control_at(&self, xgrid: &CartesianGrid, x: &[f64]) -> Option<Vec<f64>> {
        let u: Vec<f64> = self.controls.iter().map(|f| xgrid.interpolate(f, x)).collect();
        u.iter().all(|v| v.is_finite()).then_some(u)
    }

    /// Applies the policy at `x`: returns the control and the successor state.
    pub fn apply(
        &self,
        p: &ProblemDef,
        xgrid: &CartesianGrid,
        x: &[f64],
    ) -> Result<(Vec<f64>, Vec<f64>), StepFailure> {
        let u = self.control_at(xgrid, x).ok_or(StepFailure::PolicyInfeasible)?;
        if !p.admissible(x, &u) {
            return Err(StepFailure::ConstraintViolated);
        }
        let next = p.step(x, &u);
        if !xgrid.contains(&next) {
            return Err(StepFailure::LeftDomain);
        }
        Ok((u, next))
    }
}

/// Closed-loop states of every initial grid node under a fixed policy.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardEnsemble {
    dim: usize,
    states: Vec<f64>,
    feasible: Vec<bool>,
    step: usize,
}

impl ForwardEnsemble {
    /// One entry per state node, feasible where `table` has a control.
    pub fn seed(xgrid: &CartesianGrid, table: &StageTable) -> Self {
        let n = xgrid.dim();
        let mut states = vec![0.0; xgrid.len() * n];
        for k in 0..xgrid.len() {
            xgrid
                .write_node_coord(k, &mut states[k * n..(k + 1) * n])
                .expect("node index in range");
        }
        let feasible = (0..xgrid.len()).map(|k| table.is_feasible(k)).collect();
        Self { dim: n, states, feasible, step: 0 }
    }

    pub fn len(&self) -> usize {
        self.feasible.len()
    }

    pub fn is_empty(&self) -> bool {
        self.feasible.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn step_count(&self) -> usize {
        self.step
    }

    pub fn state(&self, k: usize) -> &[f64] {
        &self.states[k * self.dim..(k + 1) * self.dim]
    }

    pub fn is_feasible(&self, k: usize) -> bool {
        self.feasible[k]
    }

    /// Initial-node indices whose trajectory is still feasible.
    pub fn feasible_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&k| self.feasible[k]).collect()
    }

    pub fn feasible_count(&self) -> usize {
        self.feasible.iter().filter(|&&f| f).count()
    }

    /// Mean state over feasible entries, accumulated in node order.
    pub fn mean_state(&self) -> Option<Vec<f64>> {
        let mut sum = vec![0.0; self.dim];
        let mut count = 0usize;
        for k in 0..self.len() {
            if self.feasible[k] {
                for (s, v) in sum.iter_mut().zip(self.state(k)) {
                    *s += v;
                }
                count += 1;
            }
        }
        (count > 0).then(|| sum.into_iter().map(|s| s / count as f64).collect())
    }
}

/// Advances every feasible entry one step under `policy`. Entries that fail
/// keep their last state and become infeasible for good.
pub fn forward_step_with(
    p: &ProblemDef,
    xgrid: &CartesianGrid,
    policy: &FeedbackPolicy,
    ens: &ForwardEnsemble,
    exec: Execution,
) -> ForwardEnsemble {
    let n = ens.dim;
    let moved = map_range(exec, ens.len(), |k| {
        let x = ens.state(k);
        if !ens.feasible[k] {
            return None;
        }
        policy.apply(p, xgrid, x).ok().map(|(_, next)| next)
    });
    let mut out = ens.clone();
    for (k, next) in moved.into_iter().enumerate() {
        match next {
            Some(s) => out.states[k * n..(k + 1) * n].copy_from_slice(&s),
            None => out.feasible[k] = false,
        }
    }
    out.step += 1;
    out
}

/// One closed-loop step of the ensemble under a stage table's policy.
pub fn forward_step(
    p: &ProblemDef,
    xgrid: &CartesianGrid,
    ugrid: &CartesianGrid,
    table: &StageTable,
    ens: &ForwardEnsemble,
) -> ForwardEnsemble {
    let policy = FeedbackPolicy::new(table, ugrid);
    forward_step_with(p, xgrid, &policy, ens, Execution::default())
}

pub fn feasible_indices(ens: &ForwardEnsemble) -> Vec<usize> {
    ens.feasible_indices()
}
