//! Exhaustive search for the cheapest gridded equilibrium operating point.
//!
//! Candidates are all admissible grid pairs whose stationarity residual
//! `max_i |x_i - f_d(x, u)_i|` is within tolerance, ranked by relaxed cost,
//! then residual, then row-major pair index. Only stationarity, the
//! inequality constraints and, for unrelaxed problems with a nominal average,
//! the average filter are applied.
//! Reachability is not checked here; the converged closed loop certifies it.

use crate::error::{Error, Result};
use crate::grid::CartesianGrid;
use crate::par::{map_range, Execution};
use crate::problem::ProblemDef;

#[derive(Debug, Clone, PartialEq)]
pub struct EquilibriumPoint {
    pub x_eq: Vec<f64>,
    pub u_eq: Vec<f64>,
    pub cost: f64,
    /// `max_i |x_i - f_d(x, u)_i|`.
    pub residual: f64,
}

/// Default stationarity tolerance: a tenth of the smallest state spacing.
///
/// A full cell is too loose for sampled mechanical systems: a node moving at
/// velocity `v` drifts only `v * t_s` per sample and would pass as stationary.
pub fn default_tolerance(xgrid: &CartesianGrid) -> f64 {
    0.1 * xgrid.spacings().into_iter().fold(f64::INFINITY, f64::min)
}

/// Lexicographic `<` on two keys; full ties keep the earlier candidate.
fn better(cand: (f64, f64), best: (f64, f64)) -> bool {
    cand.0 < best.0 || (cand.0 == best.0 && cand.1 < best.1)
}

pub fn equilibrium_search(
    p: &ProblemDef,
    xgrid: &CartesianGrid,
    ugrid: &CartesianGrid,
    eq_tol: f64,
) -> Result<EquilibriumPoint> {
    p.check_grids(xgrid, ugrid)?;
    if !(eq_tol > 0.0) {
        return Err(Error::Config(format!("equilibrium tolerance must be positive, got {eq_tol}")));
    }
    let avg_filter = match (p.lambda == 0.0, p.nominal_average) {
        (true, Some(alpha)) => {
            let widest = xgrid.spacings().into_iter().fold(0.0, f64::max);
            Some((alpha, 0.5 * widest))
        }
        _ => None,
    };
    let nu = ugrid.len();
    // per state node: cheapest admissible pair within tolerance, as
    // (cost, pair index, residual)
    let rows = map_range(Execution::default(), xgrid.len(), |k| {
        let x = xgrid.node_coord(k).expect("node index in range");
        let mut best: Option<(f64, usize, f64)> = None;
        for j in 0..nu {
            let u = ugrid.node_coord(j).expect("node index in range");
            if !p.admissible(&x, &u) {
                continue;
            }
            let next = p.step(&x, &u);
            let residual = x.iter().zip(&next).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
            if !(residual <= eq_tol) {
                continue;
            }
            if let Some((alpha, tol)) = avg_filter {
                if (p.average(&x, &u) - alpha).abs() > tol {
                    continue;
                }
            }
            let cost = p.relaxed_cost(&x, &u);
            if best.map_or(true, |b| better((cost, residual), (b.0, b.2))) {
                best = Some((cost, k * nu + j, residual));
            }
        }
        best
    });
    // across nodes: cost, then residual, then node order
    let (cost, pair, residual) = rows
        .into_iter()
        .flatten()
        .fold(None, |acc: Option<(f64, usize, f64)>, cand| match acc {
            Some(a) if !better((cand.0, cand.2), (a.0, a.2)) => Some(a),
            _ => Some(cand),
        })
        .ok_or(Error::NoEquilibrium { tol: eq_tol })?;
    Ok(EquilibriumPoint {
        x_eq: xgrid.node_coord(pair / nu)?,
        u_eq: ugrid.node_coord(pair % nu)?,
        cost,
        residual,
    })
}
