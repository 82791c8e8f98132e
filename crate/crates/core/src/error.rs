use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("out of domain: {0}")]
    OutOfDomain(String),

    #[error("no feasible initial conditions")]
    NoFeasibleInitial,

    #[error("infeasible problem: no gridded initial condition is feasible at horizon {horizon}")]
    InfeasibleProblem { horizon: usize },

    #[error("rollout became infeasible at step {step}: {reason}")]
    RolloutInfeasible { step: usize, reason: String },

    #[error("no gridded equilibrium within tolerance {tol}; try a larger tolerance")]
    NoEquilibrium { tol: f64 },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
