//! CSV and report writers. Numbers use Rust's shortest round-trip `f64`
//! formatting, so every field parses back to the exact value written.

use std::fmt::Write as _;

use ucpadp::equilibrium::EquilibriumPoint;
use ucpadp::reference::{Comparison, SweepTable, TraceSummary};
use ucpadp::{CartesianGrid, RolloutTrace, SolveReport};

fn join(values: &[f64]) -> String {
    values.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

fn axis_names(prefix: char, n: usize) -> String {
    (1..=n).map(|i| format!("{prefix}{i}")).collect::<Vec<_>>().join(",")
}

/// One row per state node in row-major order: node coordinates, control
/// coordinates (`inf` where infeasible), feasibility flag and the average
/// cost-to-go `C/N` of the terminal horizon.
pub fn policy_csv(report: &SolveReport, xgrid: &CartesianGrid, ugrid: &CartesianGrid) -> String {
    let table = &report.first_stage_policy;
    let n = report.terminal_horizon as f64;
    let mut out = format!(
        "{},{},feasible,cost_per_stage\n",
        axis_names('x', xgrid.dim()),
        axis_names('u', ugrid.dim())
    );
    for k in 0..xgrid.len() {
        let x = xgrid.node_coord(k).expect("node index in range");
        let u = table.control(k, ugrid).unwrap_or_else(|| vec![f64::INFINITY; ugrid.dim()]);
        let feasible = table.is_feasible(k);
        let c = table.cost_to_go.get(k) / n;
        let _ = writeln!(out, "{},{},{},{}", join(&x), join(&u), u8::from(feasible), c);
    }
    out
}

pub fn metrics_csv(report: &SolveReport, xdim: usize, udim: usize) -> String {
    let mut out = String::from("horizon,");
    for i in 1..=udim {
        let _ = write!(out, "delta_mu{i},");
    }
    for i in 1..=xdim {
        let _ = write!(out, "delta_x{i},");
    }
    out.push_str("feasible,seeded,mu_passed,x_passed\n");
    for m in &report.metrics {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            m.horizon,
            join(&m.delta_mu),
            join(&m.delta_x),
            m.feasible_count,
            m.seeded_count,
            u8::from(m.mu_passed),
            u8::from(m.x_passed)
        );
    }
    out
}

/// Human-readable summary. Lines starting with `time.` carry wall-clock
/// timings and are the only content that varies between identical runs.
pub fn report_txt(problem: &str, report: &SolveReport, xgrid: &CartesianGrid, ugrid: &CartesianGrid) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "problem = {problem}");
    let _ = writeln!(out, "status = {}", report.status.as_str());
    let _ = writeln!(out, "terminal_horizon = {}", report.terminal_horizon);
    let tested: Vec<String> = report.metrics.iter().map(|m| m.horizon.to_string()).collect();
    let _ = writeln!(out, "tested_horizons = {}", tested.join(","));
    let _ = writeln!(out, "state_nodes = {}", xgrid.len());
    let _ = writeln!(out, "control_nodes = {}", ugrid.len());
    let _ = writeln!(out, "feasible_nodes = {}", report.first_stage_policy.feasible_count());
    match report.achieved_average {
        Some(a) => {
            let _ = writeln!(out, "achieved_average = {a}");
        }
        None => out.push_str("achieved_average = none\n"),
    }
    match report.final_ensemble.mean_state() {
        Some(x) => {
            let _ = writeln!(out, "terminal_mean_state = {}", join(&x));
        }
        None => out.push_str("terminal_mean_state = none\n"),
    }
    for m in &report.metrics {
        let _ = writeln!(
            out,
            "round.{} = delta_mu [{}] delta_x [{}] feasible {}/{} mu_passed {} x_passed {}",
            m.horizon,
            join(&m.delta_mu),
            join(&m.delta_x),
            m.feasible_count,
            m.seeded_count,
            m.mu_passed,
            m.x_passed
        );
    }
    let _ = writeln!(out, "time.total_s = {:.3}", report.wall_time.as_secs_f64());
    let _ = writeln!(out, "time.backward_s = {:.3}", report.backward_time.as_secs_f64());
    let _ = writeln!(out, "time.forward_s = {:.3}", report.forward_time.as_secs_f64());
    out
}

/// Rows `k = 0..=len`. The last row holds the final state with empty control
/// and cost fields.
pub fn trajectory_csv(trace: &RolloutTrace, xdim: usize, udim: usize) -> String {
    let mut out = format!(
        "k,{},{},cost,relaxed_cost,average\n",
        axis_names('x', xdim),
        axis_names('u', udim)
    );
    for (k, s) in trace.steps.iter().enumerate() {
        let _ = writeln!(
            out,
            "{k},{},{},{},{},{}",
            join(&s.state),
            join(&s.control),
            s.cost,
            s.relaxed_cost,
            s.average
        );
    }
    let blanks = ",".repeat(udim + 3);
    let _ = writeln!(out, "{},{}{}", trace.len(), join(&trace.final_state), blanks);
    out
}

pub fn compare_csv(c: &Comparison) -> String {
    let (a, b): (TraceSummary, TraceSummary) = (c.ucpadp.summary(), c.reference.summary());
    let dev = ucpadp::reference::relative_deviation;
    let mut out = String::from("quantity,ucpadp,reference,relative_deviation\n");
    let _ = writeln!(out, "horizon,{0},{0},0", c.reference_horizon);
    let _ = writeln!(out, "steps,{},{},{}", a.steps, b.steps, dev(a.steps as f64, b.steps as f64));
    for (name, x, y) in [
        ("total_cost", a.total_cost, b.total_cost),
        ("mean_cost", a.mean_cost, b.mean_cost),
        ("mean_relaxed_cost", a.mean_relaxed_cost, b.mean_relaxed_cost),
        ("mean_average", a.mean_average, b.mean_average),
    ] {
        let _ = writeln!(out, "{name},{x},{y},{}", dev(x, y));
    }
    out
}

pub fn sweep_csv(t: &SweepTable) -> String {
    let mut out = String::from("horizon,min_cost,max_cost,mean_cost,feasible_count\n");
    for r in &t.rows {
        let _ = writeln!(out, "{},{},{},{},{}", r.horizon, r.min(), r.max(), r.mean(), r.costs.len());
    }
    out
}

pub fn equilibrium_csv(e: &EquilibriumPoint) -> String {
    format!(
        "{},{},cost,residual\n{},{},{},{}\n",
        axis_names('x', e.x_eq.len()),
        axis_names('u', e.u_eq.len()),
        join(&e.x_eq),
        join(&e.u_eq),
        e.cost,
        e.residual
    )
}
