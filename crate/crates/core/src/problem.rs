//! Problem definitions: dynamics, stage cost, inequality constraints and the
//! average-constraint function, plus the two builtin pendulum problems.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::grid::CartesianGrid;

pub type VectorFn = Arc<dyn Fn(&[f64], &[f64]) -> Vec<f64> + Send + Sync>;
pub type ScalarFn = Arc<dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync>;

/// An undiscounted, average-constrained optimal control problem.
///
/// `inequality` is feasible when every component is `<= 0`. The average
/// constraint is handled through the relaxed cost `stage_cost + lambda * average_fn`;
/// `nominal_average` is only used for reporting and the equilibrium filter.
#[derive(Clone)]
pub struct ProblemDef {
    pub name: String,
    pub state_dim: usize,
    pub control_dim: usize,
    pub dynamics: VectorFn,
    pub stage_cost: ScalarFn,
    pub inequality: VectorFn,
    pub average_fn: ScalarFn,
    pub lambda: f64,
    pub nominal_average: Option<f64>,
}

impl fmt::Debug for ProblemDef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProblemDef")
            .field("name", &self.name)
            .field("state_dim", &self.state_dim)
            .field("control_dim", &self.control_dim)
            .field("lambda", &self.lambda)
            .field("nominal_average", &self.nominal_average)
            .finish_non_exhaustive()
    }
}

impl ProblemDef {
    /// A problem with no average constraint (`average_fn = 0`, `lambda = 0`).
    pub fn new<D, C, G>(
        name: impl Into<String>,
        state_dim: usize,
        control_dim: usize,
        dynamics: D,
        stage_cost: C,
        inequality: G,
    ) -> Self
    where
        D: Fn(&[f64], &[f64]) -> Vec<f64> + Send + Sync + 'static,
        C: Fn(&[f64], &[f64]) -> f64 + Send + Sync + 'static,
        G: Fn(&[f64], &[f64]) -> Vec<f64> + Send + Sync + 'static,
    {
        Self {
            name: name.into(),
            state_dim,
            control_dim,
            dynamics: Arc::new(dynamics),
            stage_cost: Arc::new(stage_cost),
            inequality: Arc::new(inequality),
            average_fn: Arc::new(|_, _| 0.0),
            lambda: 0.0,
            nominal_average: None,
        }
    }

    pub fn with_average<A>(mut self, average_fn: A, lambda: f64, nominal: Option<f64>) -> Self
    where
        A: Fn(&[f64], &[f64]) -> f64 + Send + Sync + 'static,
    {
        self.average_fn = Arc::new(average_fn);
        self.lambda = lambda;
        self.nominal_average = nominal;
        self
    }

    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.lambda = lambda;
        self
    }

    pub fn step(&self, x: &[f64], u: &[f64]) -> Vec<f64> {
        (self.dynamics)(x, u)
    }

    pub fn cost(&self, x: &[f64], u: &[f64]) -> f64 {
        (self.stage_cost)(x, u)
    }

    pub fn average(&self, x: &[f64], u: &[f64]) -> f64 {
        (self.average_fn)(x, u)
    }

    pub fn relaxed_cost(&self, x: &[f64], u: &[f64]) -> f64 {
        self.cost(x, u) + self.lambda * self.average(x, u)
    }

    /// `true` when every inequality component is `<= 0`.
    pub fn admissible(&self, x: &[f64], u: &[f64]) -> bool {
        (self.inequality)(x, u).iter().all(|&g| g <= 0.0)
    }

    /// Checks grid dimensions against the problem.
    pub fn check_grids(&self, xgrid: &CartesianGrid, ugrid: &CartesianGrid) -> Result<()> {
        if xgrid.dim() != self.state_dim {
            return Err(Error::Config(format!(
                "state grid has {} axes but problem '{}' has {} states",
                xgrid.dim(),
                self.name,
                self.state_dim
            )));
        }
        if ugrid.dim() != self.control_dim {
            return Err(Error::Config(format!(
                "control grid has {} axes but problem '{}' has {} controls",
                ugrid.dim(),
                self.name,
                self.control_dim
            )));
        }
        Ok(())
    }
}

/// Physical constants and integration settings of a damped pendulum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PendulumParams {
    pub mass: f64,
    pub gravity: f64,
    pub length: f64,
    pub damping: f64,
    pub sample_time: f64,
    pub substeps: usize,
}

impl Default for PendulumParams {
    fn default() -> Self {
        Self {
            mass: 1.0,
            gravity: 1.0,
            length: 1.0,
            damping: 0.0,
            sample_time: 0.2,
            substeps: 10,
        }
    }
}

impl PendulumParams {
    pub fn with_damping(mut self, damping: f64) -> Self {
        self.damping = damping;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("mass", self.mass),
            ("gravity", self.gravity),
            ("length", self.length),
            ("sample_time", self.sample_time),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("pendulum {name} must be positive, got {v}")));
            }
        }
        if !(self.damping >= 0.0 && self.damping.is_finite()) {
            return Err(Error::Config(format!(
                "pendulum damping must be non-negative, got {}",
                self.damping
            )));
        }
        if self.substeps == 0 {
            return Err(Error::Config("pendulum substeps must be at least 1".into()));
        }
        Ok(())
    }

    #[inline]
    fn accel(&self, theta: f64, omega: f64, u: f64) -> f64 {
        u / (self.mass * self.length * self.length)
            - self.damping / self.mass * omega
            - self.gravity / self.length * theta.sin()
    }

    /// Torque holding the pendulum still at angle `theta`.
    pub fn holding_torque(&self, theta: f64) -> f64 {
        self.mass * self.gravity * self.length * theta.sin()
    }
}

/// Advances `(theta, theta_dot)` by one sample period with constant torque
/// `u`, using classical RK4 with `params.substeps` fixed substeps.
pub fn pendulum_step(params: &PendulumParams, x: [f64; 2], u: f64) -> [f64; 2] {
    let h = params.sample_time / params.substeps as f64;
    let [mut th, mut om] = x;
    for _ in 0..params.substeps {
        let k1t = om;
        let k1o = params.accel(th, om, u);
        let k2t = om + 0.5 * h * k1o;
        let k2o = params.accel(th + 0.5 * h * k1t, k2t, u);
        let k3t = om + 0.5 * h * k2o;
        let k3o = params.accel(th + 0.5 * h * k2t, k3t, u);
        let k4t = om + h * k3o;
        let k4o = params.accel(th + h * k3t, k4t, u);
        th += h / 6.0 * (k1t + 2.0 * k2t + 2.0 * k3t + k4t);
        om += h / 6.0 * (k1o + 2.0 * k2o + 2.0 * k3o + k4o);
    }
    [th, om]
}

/// State and control bounds of the minimum-time swing-up problem.
pub const MIN_TIME_THETA: (f64, f64) = (-2.0, 3.5);
pub const MIN_TIME_THETA_DOT: (f64, f64) = (-1.5, 2.0);
/// Box half-widths of the average-angle problem (`|u|, |theta|, |theta_dot| <= 1`).
pub const AVG_ANGLE_BOUND: f64 = 1.0;
pub const TORQUE_LIMIT: f64 = 1.0;

fn pendulum_dynamics(params: PendulumParams) -> impl Fn(&[f64], &[f64]) -> Vec<f64> {
    move |x, u| pendulum_step(&params, [x[0], x[1]], u[0]).to_vec()
}

/// Minimum-time swing-up to the inverted position. Stage cost is 0 inside the
/// target box `|theta - pi| < target[0]`, `|theta_dot| < target[1]` and 1
/// elsewhere.
pub fn min_time_pendulum(params: PendulumParams, target: [f64; 2]) -> Result<ProblemDef> {
    params.validate()?;
    if !(target[0] > 0.0 && target[1] > 0.0) {
        return Err(Error::Config(format!("target half-widths must be positive, got {target:?}")));
    }
    let (th_lo, th_hi) = MIN_TIME_THETA;
    let (om_lo, om_hi) = MIN_TIME_THETA_DOT;
    Ok(ProblemDef::new(
        "min_time_pendulum",
        2,
        1,
        pendulum_dynamics(params),
        move |x, _u| {
            if (x[0] - PI).abs() < target[0] && x[1].abs() < target[1] {
                0.0
            } else {
                1.0
            }
        },
        move |x, u| {
            vec![
                u[0].abs() - TORQUE_LIMIT,
                th_lo - x[0],
                x[0] - th_hi,
                om_lo - x[1],
                x[1] - om_hi,
            ]
        },
    ))
}

/// Minimum-time problem with the target box bound to twice the state spacing.
pub fn min_time_pendulum_for_grid(params: PendulumParams, xgrid: &CartesianGrid) -> Result<ProblemDef> {
    if xgrid.dim() != 2 {
        return Err(Error::Config("pendulum state grid must have two axes".into()));
    }
    let d = xgrid.spacings();
    min_time_pendulum(params, [2.0 * d[0], 2.0 * d[1]])
}

/// The minimum-time problem with unit constants, no damping, `t_s = 0.2` and
/// the default 0.05 state spacing.
pub fn builtin_min_time_pendulum() -> ProblemDef {
    min_time_pendulum(PendulumParams::default(), [0.1, 0.1]).expect("builtin parameters are valid")
}

/// Multiplier that makes `theta_ref` the minimizing equilibrium of
/// `u_eq(theta)^2 + lambda * theta`.
pub fn avg_angle_lambda(params: &PendulumParams, theta_ref: f64) -> f64 {
    let mgl = params.mass * params.gravity * params.length;
    -2.0 * mgl * mgl * theta_ref.sin() * theta_ref.cos()
}

/// Keep the long-run mean angle at `theta_ref` with minimum `u^2`, via the
/// relaxed cost `u^2 + lambda0 * theta`.
pub fn avg_angle_pendulum(params: PendulumParams, theta_ref: f64) -> Result<ProblemDef> {
    params.validate()?;
    if !(theta_ref.abs() < 1.0) {
        return Err(Error::Config(format!(
            "theta_ref must satisfy |theta_ref| < 1, got {theta_ref}"
        )));
    }
    let lambda = avg_angle_lambda(&params, theta_ref);
    let b = AVG_ANGLE_BOUND;
    Ok(ProblemDef::new(
        "avg_angle_pendulum",
        2,
        1,
        pendulum_dynamics(params),
        |_x, u| u[0] * u[0],
        move |x, u| {
            vec![
                u[0].abs() - TORQUE_LIMIT,
                x[0].abs() - b,
                x[1].abs() - b,
            ]
        },
    )
    .with_average(|x, _u| x[0], lambda, Some(theta_ref)))
}

/// The average-angle problem with unit constants, damping 1 and `t_s = 0.2`.
pub fn builtin_avg_angle_pendulum(theta_ref: f64) -> Result<ProblemDef> {
    avg_angle_pendulum(PendulumParams::default().with_damping(1.0), theta_ref)
}
