//! Flat `section.key = value` run configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Every key must be
//! known; unknown or duplicated keys are errors naming the key.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use ucpadp::problem::{avg_angle_lambda, avg_angle_pendulum, min_time_pendulum};
use ucpadp::{CartesianGrid, Error, PendulumParams, ProblemDef, SolverConfig};

const KEYS: &[&str] = &[
    "problem.name",
    "problem.mass",
    "problem.gravity",
    "problem.length",
    "problem.damping",
    "problem.sample_time",
    "problem.substeps",
    "problem.theta_ref",
    "problem.lambda",
    "problem.target",
    "state.lo",
    "state.hi",
    "state.spacing",
    "control.lo",
    "control.hi",
    "control.spacing",
    "solver.eps_mu",
    "solver.eps_x",
    "solver.n_init",
    "solver.n_max",
    "solver.growth",
    "solver.average_rollout_factor",
    "reference.multiplier",
    "rollout.x0",
    "rollout.horizon",
    "sweep.horizons",
    "sweep.trajectory_horizon",
    "equilibrium.tol",
    "output.dir",
    "run.seed",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProblemKind {
    MinTime,
    AvgAngle,
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub kind: ProblemKind,
    pub params: PendulumParams,
    pub theta_ref: f64,
    pub lambda: Option<f64>,
    pub target: Option<[f64; 2]>,
    pub xgrid: CartesianGrid,
    pub ugrid: CartesianGrid,
    pub solver: SolverConfig,
    pub reference_multiplier: usize,
    pub x0: Option<Vec<f64>>,
    pub rollout_horizon: Option<usize>,
    pub sweep_horizons: Vec<usize>,
    pub sweep_trajectory_horizon: Option<usize>,
    pub eq_tol: Option<f64>,
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("duplicate key `{0}`")]
    Duplicate(String),
    #[error("missing required key `{0}`")]
    Missing(&'static str),
    #[error("key `{key}`: {msg}")]
    Invalid { key: String, msg: String },
}

fn invalid(key: &str, msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { key: key.to_string(), msg: msg.into() }
}

struct Table(BTreeMap<String, String>);

impl Table {
    fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut map = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or(ConfigError::Syntax { line: i + 1 })?;
            let (k, v) = (k.trim(), v.trim());
            if k.is_empty() {
                return Err(ConfigError::Syntax { line: i + 1 });
            }
            if !KEYS.contains(&k) {
                return Err(ConfigError::UnknownKey(k.to_string()));
            }
            if map.insert(k.to_string(), v.to_string()).is_some() {
                return Err(ConfigError::Duplicate(k.to_string()));
            }
        }
        Ok(Self(map))
    }

    fn raw(&self, key: &str) -> Option<&str> {
        self.0.get(key).map(String::as_str)
    }

    fn f64(&self, key: &str) -> Result<Option<f64>, ConfigError> {
        self.raw(key).map(|v| parse_f64(key, v)).transpose()
    }

    fn usize(&self, key: &str) -> Result<Option<usize>, ConfigError> {
        self.raw(key)
            .map(|v| v.parse().map_err(|_| invalid(key, format!("expected a non-negative integer, got `{v}`"))))
            .transpose()
    }

    fn list(&self, key: &str) -> Result<Option<Vec<f64>>, ConfigError> {
        self.raw(key).map(|v| parse_list(key, v)).transpose()
    }

    fn required_list(&self, key: &'static str) -> Result<Vec<f64>, ConfigError> {
        self.list(key)?.ok_or(ConfigError::Missing(key))
    }
}

fn parse_f64(key: &str, v: &str) -> Result<f64, ConfigError> {
    let x: f64 = v.parse().map_err(|_| invalid(key, format!("expected a number, got `{v}`")))?;
    if !x.is_finite() {
        return Err(invalid(key, format!("expected a finite number, got `{v}`")));
    }
    Ok(x)
}

/// Comma-separated numbers.
pub fn parse_list(key: &str, v: &str) -> Result<Vec<f64>, ConfigError> {
    if v.trim().is_empty() {
        return Ok(Vec::new());
    }
    v.split(',').map(|s| parse_f64(key, s.trim())).collect()
}

/// Comma-separated non-negative integers.
pub fn parse_usize_list(key: &str, v: &str) -> Result<Vec<usize>, ConfigError> {
    if v.trim().is_empty() {
        return Ok(Vec::new());
    }
    v.split(',')
        .map(|s| {
            let s = s.trim();
            s.parse().map_err(|_| invalid(key, format!("expected a non-negative integer, got `{s}`")))
        })
        .collect()
}

fn grid(t: &Table, section: &'static str) -> Result<CartesianGrid, ConfigError> {
    let [lo_key, hi_key, d_key] = match section {
        "state" => ["state.lo", "state.hi", "state.spacing"],
        _ => ["control.lo", "control.hi", "control.spacing"],
    };
    let lo = t.required_list(lo_key)?;
    let hi = t.required_list(hi_key)?;
    let d = t.required_list(d_key)?;
    if lo.is_empty() {
        return Err(invalid(lo_key, "at least one axis is required"));
    }
    if hi.len() != lo.len() {
        return Err(invalid(hi_key, format!("has {} entries, `{lo_key}` has {}", hi.len(), lo.len())));
    }
    if d.len() != lo.len() {
        return Err(invalid(d_key, format!("has {} entries, `{lo_key}` has {}", d.len(), lo.len())));
    }
    for &s in &d {
        if !(s > 0.0) {
            return Err(invalid(d_key, format!("spacing must be positive, got {s}")));
        }
    }
    let bounds: Vec<_> = (0..lo.len()).map(|a| (lo[a], hi[a], d[a])).collect();
    CartesianGrid::from_bounds(&bounds).map_err(|e| invalid(section, e.to_string()))
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let t = Table::parse(text)?;
        let kind = match t.raw("problem.name").ok_or(ConfigError::Missing("problem.name"))? {
            "min_time_pendulum" => ProblemKind::MinTime,
            "avg_angle_pendulum" => ProblemKind::AvgAngle,
            other => return Err(invalid("problem.name", format!("unknown problem `{other}`"))),
        };
        let mut params = PendulumParams::default();
        if kind == ProblemKind::AvgAngle {
            params.damping = 1.0;
        }
        for (key, slot) in [
            ("problem.mass", &mut params.mass),
            ("problem.gravity", &mut params.gravity),
            ("problem.length", &mut params.length),
            ("problem.damping", &mut params.damping),
            ("problem.sample_time", &mut params.sample_time),
        ] {
            if let Some(v) = t.f64(key)? {
                *slot = v;
            }
        }
        if let Some(n) = t.usize("problem.substeps")? {
            params.substeps = n;
        }
        params.validate().map_err(|e| invalid("problem", e.to_string()))?;

        let theta_ref = t.f64("problem.theta_ref")?.unwrap_or(0.5);
        let target = match t.list("problem.target")? {
            None => None,
            Some(v) if v.len() == 2 => Some([v[0], v[1]]),
            Some(v) => return Err(invalid("problem.target", format!("expected 2 entries, got {}", v.len()))),
        };

        let xgrid = grid(&t, "state")?;
        let ugrid = grid(&t, "control")?;

        let mut solver = SolverConfig::for_grids(&xgrid, &ugrid);
        if let Some(v) = t.list("solver.eps_mu")? {
            solver.eps_mu = v;
        }
        if let Some(v) = t.list("solver.eps_x")? {
            solver.eps_x = v;
        }
        for (key, slot) in [
            ("solver.n_init", &mut solver.n_init),
            ("solver.n_max", &mut solver.n_max),
            ("solver.growth", &mut solver.growth),
            ("solver.average_rollout_factor", &mut solver.average_rollout_factor),
        ] {
            if let Some(v) = t.usize(key)? {
                *slot = v;
            }
        }
        solver
            .validate(xgrid.dim(), ugrid.dim())
            .map_err(|e| invalid("solver", e.to_string()))?;

        let reference_multiplier = t.usize("reference.multiplier")?.unwrap_or(10);
        if reference_multiplier == 0 {
            return Err(invalid("reference.multiplier", "must be at least 1"));
        }
        let x0 = t.list("rollout.x0")?;
        if let Some(x0) = &x0 {
            if x0.len() != xgrid.dim() {
                return Err(invalid("rollout.x0", format!("expected {} entries, got {}", xgrid.dim(), x0.len())));
            }
        }
        let sweep_horizons = match t.raw("sweep.horizons") {
            Some(v) => parse_usize_list("sweep.horizons", v)?,
            None => Vec::new(),
        };
        let eq_tol = t.f64("equilibrium.tol")?;
        if let Some(tol) = eq_tol {
            if !(tol > 0.0) {
                return Err(invalid("equilibrium.tol", format!("must be positive, got {tol}")));
            }
        }
        // `run.seed` is accepted for forward compatibility; nothing here is random.
        if let Some(v) = t.raw("run.seed") {
            v.parse::<u64>()
                .map_err(|_| invalid("run.seed", format!("expected an integer, got `{v}`")))?;
        }

        let cfg = Self {
            kind,
            params,
            theta_ref,
            lambda: t.f64("problem.lambda")?,
            target,
            xgrid,
            ugrid,
            solver,
            reference_multiplier,
            x0,
            rollout_horizon: t.usize("rollout.horizon")?,
            sweep_horizons,
            sweep_trajectory_horizon: t.usize("sweep.trajectory_horizon")?,
            eq_tol,
            out_dir: t.raw("output.dir").map(PathBuf::from),
        };
        cfg.problem()?;
        Ok(cfg)
    }

    /// Builds the configured problem and checks it against the grids.
    pub fn problem(&self) -> Result<ProblemDef, ConfigError> {
        let p = match self.kind {
            ProblemKind::MinTime => {
                let d = self.xgrid.spacings();
                if d.len() != 2 {
                    return Err(invalid("state.spacing", "pendulum problems need two state axes"));
                }
                let target = self.target.unwrap_or([2.0 * d[0], 2.0 * d[1]]);
                min_time_pendulum(self.params, target).map_err(|e| invalid("problem.target", e.to_string()))?
            }
            ProblemKind::AvgAngle => {
                let p = avg_angle_pendulum(self.params, self.theta_ref)
                    .map_err(|e| invalid("problem.theta_ref", e.to_string()))?;
                p.with_lambda(self.lambda.unwrap_or_else(|| avg_angle_lambda(&self.params, self.theta_ref)))
            }
        };
        p.check_grids(&self.xgrid, &self.ugrid).map_err(|e| match e {
            Error::Config(msg) => invalid("problem.name", msg),
            other => invalid("problem.name", other.to_string()),
        })?;
        Ok(p)
    }
}
