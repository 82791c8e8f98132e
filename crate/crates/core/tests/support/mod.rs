//! Oracles and property checks shared by the integration tests and the
//! acceptance suite. Every check returns `Err(description)` on failure.
#![allow(dead_code)]

use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ucpadp::dp::INFEASIBLE;
use ucpadp::problem::{avg_angle_lambda, avg_angle_pendulum, pendulum_step};
use ucpadp::solver::delta_mu;
use ucpadp::{
    CartesianGrid, Execution, NodeField, PendulumParams, ProblemDef, SolveReport, Solver, SolverConfig, StageTable,
    TransitionModel,
};

pub type Check = Result<(), String>;

fn run<S: Strategy>(cases: u32, strategy: S, test: impl Fn(S::Value) -> Result<(), TestCaseError>) -> Check
where
    S::Value: std::fmt::Debug,
{
    let mut runner = TestRunner::new(Config { cases, failure_persistence: None, ..Config::default() });
    runner.run(&strategy, test).map_err(|e| e.to_string())
}

// ---------------------------------------------------------------------------
// Grid-aligned toy problems

const TOY_D: f64 = 0.5;
const TOY_U_LO: f64 = -0.5;
const TOY_U_D: f64 = 0.25;

/// Random problem whose successors are grid nodes (or leave the box) and
/// whose costs are multiples of 1/8, so every cost sum is exact.
pub struct Toy {
    pub problem: ProblemDef,
    pub xgrid: CartesianGrid,
    pub ugrid: CartesianGrid,
    /// Per (node, control) pair: `None` when inadmissible or leaving the box.
    pub succ: Vec<Option<usize>>,
    pub cost: Vec<f64>,
}

impl Toy {
    pub fn pairs(&self) -> usize {
        self.xgrid.len() * self.ugrid.len()
    }
}

pub fn random_toy(seed: u64) -> Toy {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = rng.gen_range(1..=2);
    let counts: Vec<usize> = (0..dim).map(|_| rng.gen_range(if dim == 1 { 2..=12 } else { 2..=5 })).collect();
    let nu = rng.gen_range(2..=4usize);
    let bounds: Vec<_> = counts.iter().map(|&c| (0.0, (c - 1) as f64 * TOY_D, TOY_D)).collect();
    let xgrid = CartesianGrid::from_bounds(&bounds).unwrap();
    let ugrid = CartesianGrid::from_bounds(&[(TOY_U_LO, TOY_U_LO + (nu - 1) as f64 * TOY_U_D, TOY_U_D)]).unwrap();
    let nx = xgrid.len();

    // 0 = admissible and in the box, 1 = leaves the box, 2 = g > 0
    let mut kind = vec![0u8; nx * nu];
    let mut target = vec![0usize; nx * nu];
    let mut cost = vec![0.0; nx * nu];
    for pair in 0..nx * nu {
        let r: f64 = rng.gen();
        kind[pair] = if r < 0.12 { 1 } else if r < 0.22 { 2 } else { 0 };
        target[pair] = rng.gen_range(0..nx);
        cost[pair] = rng.gen_range(0..=16) as f64 / 8.0;
    }
    let succ = (0..nx * nu).map(|p| (kind[p] == 0).then_some(target[p])).collect();

    let node_of = {
        let counts = counts.clone();
        move |x: &[f64]| {
            x.iter().zip(&counts).fold(0usize, |acc, (&v, &c)| acc * c + (v / TOY_D).round() as usize)
        }
    };
    let ctrl_of = |u: &[f64]| ((u[0] - TOY_U_LO) / TOY_U_D).round() as usize;
    let coords = {
        let xg = xgrid.clone();
        move |k: usize| xg.node_coord(k).unwrap()
    };

    let (k1, t1, n1) = (kind.clone(), target.clone(), node_of.clone());
    let dynamics = move |x: &[f64], u: &[f64]| {
        let pair = n1(x) * nu + ctrl_of(u);
        if k1[pair] == 1 {
            let mut out = coords(0);
            out[0] = -1.0;
            out
        } else {
            coords(t1[pair])
        }
    };
    let (c2, n2) = (cost.clone(), node_of.clone());
    let stage_cost = move |x: &[f64], u: &[f64]| c2[n2(x) * nu + ctrl_of(u)];
    let k3 = kind;
    let inequality = move |x: &[f64], u: &[f64]| {
        let pair = node_of(x) * nu + ctrl_of(u);
        vec![if k3[pair] == 2 { 1.0 } else { -1.0 }]
    };
    let problem = ProblemDef::new("toy", dim, 1, dynamics, stage_cost, inequality);
    Toy { problem, xgrid, ugrid, succ, cost }
}

/// Optimal `h`-stage cost and first control from every node by enumerating
/// all control sequences (`h >= 1`). Sequences are visited in lexicographic order and
/// replaced only on a strictly lower total, so ties keep the smallest first
/// control. Infeasible nodes give `(inf, INFEASIBLE)`.
pub fn enumerate(toy: &Toy, h: usize) -> Vec<(f64, u32)> {
    let nu = toy.ugrid.len();
    let total = nu.pow(h as u32);
    (0..toy.xgrid.len())
        .map(|x0| {
            let mut best = (f64::INFINITY, INFEASIBLE);
            let mut seq = vec![0usize; h];
            for code in 0..total {
                let mut c = code;
                for s in seq.iter_mut().rev() {
                    *s = c % nu;
                    c /= nu;
                }
                let mut x = x0;
                let mut costs = Vec::with_capacity(h);
                let mut ok = true;
                for &u in &seq {
                    match toy.succ[x * nu + u] {
                        Some(next) => {
                            costs.push(toy.cost[x * nu + u]);
                            x = next;
                        }
                        None => {
                            ok = false;
                            break;
                        }
                    }
                }
                if !ok {
                    continue;
                }
                // summed last stage first, matching cumulative cost-to-go
                let sum = costs.iter().rev().fold(0.0, |acc, c| c + acc);
                if sum < best.0 {
                    best = (sum, seq[0] as u32);
                }
            }
            best
        })
        .collect()
}

/// Chained backward steps against enumeration for horizons `1..=max_h`.
pub fn check_toy_bellman(seed: u64, max_h: usize) -> Check {
    let toy = random_toy(seed);
    if toy.pairs() > 100 {
        return Err(format!("seed {seed}: {} pairs", toy.pairs()));
    }
    let mut prev = NodeField::constant(toy.xgrid.len(), 0.0);
    for h in 1..=max_h {
        let table = ucpadp::backward_step(&toy.problem, &toy.xgrid, &toy.ugrid, &prev).map_err(|e| e.to_string())?;
        let oracle = enumerate(&toy, h);
        for (k, &(c, u)) in oracle.iter().enumerate() {
            let got = (table.cost_to_go.get(k), table.policy[k]);
            let same = if c.is_finite() { got == (c, u) } else { got.0 == f64::INFINITY && got.1 == INFEASIBLE };
            if !same {
                return Err(format!("seed {seed}, horizon {h}, node {k}: backward {got:?}, enumeration {:?}", (c, u)));
            }
        }
        prev = table.cost_to_go;
    }
    Ok(())
}

/// At least `instances` random toys with at most 100 pairs and horizons up to 6.
pub fn check_bellman_oracle(instances: u64) -> Check {
    for seed in 0..instances {
        check_toy_bellman(seed, 6)?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Direct (uncached) Bellman stage

/// Evaluates dynamics, constraints and interpolation afresh for every pair.
pub fn direct_backward(p: &ProblemDef, xg: &CartesianGrid, ug: &CartesianGrid, prev: &NodeField) -> StageTable {
    let mut cost = Vec::with_capacity(xg.len());
    let mut policy = Vec::with_capacity(xg.len());
    for k in 0..xg.len() {
        let x = xg.node_coord(k).unwrap();
        let mut best = (f64::INFINITY, INFEASIBLE);
        for j in 0..ug.len() {
            let u = ug.node_coord(j).unwrap();
            if !p.admissible(&x, &u) {
                continue;
            }
            let tail = xg.interpolate(prev, &p.step(&x, &u));
            if !tail.is_finite() {
                continue;
            }
            let total = p.relaxed_cost(&x, &u) + tail;
            if total < best.0 {
                best = (total, j as u32);
            }
        }
        cost.push(best.0);
        policy.push(best.1);
    }
    StageTable { cost_to_go: NodeField::new(cost), policy }
}

pub fn same_table(a: &StageTable, b: &StageTable) -> bool {
    a.policy == b.policy
        && a.cost_to_go.values().iter().map(|v| v.to_bits()).eq(b.cost_to_go.values().iter().map(|v| v.to_bits()))
}

/// Coarse average-angle pendulum used by the solver properties.
pub fn small_pendulum(d_x: f64, d_u: f64) -> (ProblemDef, CartesianGrid, CartesianGrid) {
    let p = avg_angle_pendulum(PendulumParams::default().with_damping(1.0), 0.5).unwrap();
    let xg = CartesianGrid::from_bounds(&[(-1.0, 1.0, d_x), (-1.0, 1.0, d_x)]).unwrap();
    let ug = CartesianGrid::from_bounds(&[(-1.0, 1.0, d_u)]).unwrap();
    (p, xg, ug)
}

pub fn check_cached_vs_direct(stages: usize) -> Check {
    let (p, xg, ug) = small_pendulum(0.1, 0.1);
    let model = TransitionModel::build(&p, &xg, &ug).map_err(|e| e.to_string())?;
    let mut prev = NodeField::constant(xg.len(), 0.0);
    for s in 0..stages {
        let cached = model.backward(&prev);
        let direct = direct_backward(&p, &xg, &ug, &prev);
        if !same_table(&cached, &direct) {
            return Err(format!("stage {s}: cached and direct tables differ"));
        }
        prev = cached.cost_to_go;
    }
    for seed in 0..20 {
        let toy = random_toy(1000 + seed);
        let model = TransitionModel::build(&toy.problem, &toy.xgrid, &toy.ugrid).map_err(|e| e.to_string())?;
        let mut prev = NodeField::constant(toy.xgrid.len(), 0.0);
        for _ in 0..4 {
            let cached = model.backward(&prev);
            if !same_table(&cached, &direct_backward(&toy.problem, &toy.xgrid, &toy.ugrid, &prev)) {
                return Err(format!("toy {seed}: cached and direct tables differ"));
            }
            prev = cached.cost_to_go;
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Grid properties

fn grid_strategy() -> impl Strategy<Value = CartesianGrid> {
    prop::collection::vec((-5.0..5.0f64, 1usize..8, 0.01..2.0f64), 1..=3).prop_map(|axes| {
        let bounds: Vec<_> = axes.iter().map(|&(lo, n, d)| (lo, lo + n as f64 * d, d)).collect();
        CartesianGrid::from_bounds(&bounds).unwrap()
    })
}

/// Interpolating at a node returns the stored value.
pub fn check_node_exactness(cases: u32) -> Check {
    let s = grid_strategy().prop_flat_map(|g| {
        let n = g.len();
        (Just(g), prop::collection::vec(-1e3..1e3f64, n), 0..n)
    });
    run(cases, s, |(g, values, k)| {
        let field = NodeField::new(values.clone());
        let x = g.node_coord(k).unwrap();
        let v = g.interpolate(&field, &x);
        prop_assert!((v - values[k]).abs() <= 1e-12 * values[k].abs().max(1.0), "{v} vs {}", values[k]);
        Ok(())
    })
}

fn point_in(g: &CartesianGrid, t: &[f64]) -> Vec<f64> {
    g.axes().iter().zip(t).map(|(a, &t)| a.lo() + t * (a.upper() - a.lo())).collect()
}

/// Affine fields are reproduced exactly (to rounding) anywhere in the box.
pub fn check_linear_reproduction(cases: u32) -> Check {
    let s = grid_strategy().prop_flat_map(|g| {
        let n = g.dim();
        (
            Just(g),
            prop::collection::vec(-3.0..3.0f64, n),
            -3.0..3.0f64,
            prop::collection::vec(0.0..=1.0f64, n),
        )
    });
    run(cases, s, |(g, a, b, t)| {
        let f = |x: &[f64]| b + x.iter().zip(&a).map(|(x, a)| a * x).sum::<f64>();
        let field = NodeField::new((0..g.len()).map(|k| f(&g.node_coord(k).unwrap())).collect());
        let x = point_in(&g, &t);
        let v = g.interpolate(&field, &x);
        let scale = 1.0 + x.iter().zip(&a).map(|(x, a)| (a * x).abs()).sum::<f64>() + b.abs();
        prop_assert!((v - f(&x)).abs() <= 1e-12 * scale, "{v} vs {}", f(&x));
        Ok(())
    })
}

/// Corner weights are a partition of unity in `[0, 1]`.
pub fn check_weight_partition(cases: u32) -> Check {
    let s = grid_strategy().prop_flat_map(|g| {
        let n = g.dim();
        (Just(g), prop::collection::vec(0.0..=1.0f64, n))
    });
    run(cases, s, |(g, t)| {
        let cell = g.locate_cell(&point_in(&g, &t)).unwrap();
        let sum: f64 = cell.weights.iter().sum();
        prop_assert!((sum - 1.0).abs() <= 1e-14, "sum {sum}");
        prop_assert!(cell.weights.iter().all(|w| (0.0..=1.0).contains(w)));
        prop_assert_eq!(cell.corners.len(), 1 << g.dim());
        Ok(())
    })
}

// ---------------------------------------------------------------------------
// Pendulum integrator

fn params_strategy() -> impl Strategy<Value = PendulumParams> {
    (0.5..2.0f64, 0.5..2.0f64, 0.5..2.0f64, 0.0..1.5f64).prop_map(|(m, g, l, d)| PendulumParams {
        mass: m,
        gravity: g,
        length: l,
        damping: d,
        ..PendulumParams::default()
    })
}

fn with_substeps(p: PendulumParams, n: usize) -> PendulumParams {
    PendulumParams { substeps: n, ..p }
}

/// Halving the RK4 substep cuts the one-sample error by about 16. Errors
/// are summed over a batch of states so that a leading coefficient that
/// happens to vanish at one point cannot distort the ratio.
pub fn check_rk4_order(cases: u32) -> Check {
    let states = prop::collection::vec((-2.0..2.0f64, -1.5..1.5f64, -1.0..1.0f64), 16);
    run(cases, (params_strategy(), states), |(p, states)| {
        let p = PendulumParams { sample_time: 1.0, ..p };
        let (mut coarse, mut fine) = (0.0, 0.0);
        for (th, om, u) in states {
            let exact = pendulum_step(&with_substeps(p, 4096), [th, om], u);
            let err = |n| {
                let x = pendulum_step(&with_substeps(p, n), [th, om], u);
                (x[0] - exact[0]).hypot(x[1] - exact[1])
            };
            coarse += err(16);
            fine += err(32);
        }
        let ratio = coarse / fine;
        prop_assert!((15.0..=17.5).contains(&ratio), "error ratio {ratio} ({coarse:e} / {fine:e})");
        Ok(())
    })
}

/// Undamped, unforced motion keeps its energy to 1e-7 over 100 samples.
pub fn check_energy(cases: u32) -> Check {
    let s = (params_strategy(), -2.0..2.0f64, -1.0..1.0f64);
    run(cases, s, |(p, th, om)| {
        let p = PendulumParams { damping: 0.0, ..p };
        let energy = |x: [f64; 2]| {
            0.5 * p.mass * p.length * p.length * x[1] * x[1] + p.mass * p.gravity * p.length * (1.0 - x[0].cos())
        };
        let mut x = [th, om];
        let e0 = energy(x);
        for _ in 0..100 {
            x = pendulum_step(&p, x, 0.0);
        }
        let drift = (energy(x) - e0).abs();
        prop_assert!(drift <= 1e-7, "energy drift {drift:e}");
        Ok(())
    })
}

/// The multiplier makes `theta_ref` stationary for `u_eq(theta)^2 + lambda theta`.
pub fn check_lambda_stationarity(cases: u32) -> Check {
    let s = (params_strategy(), -0.99..0.99f64);
    run(cases, s, |(p, th)| {
        let lambda = avg_angle_lambda(&p, th);
        let mgl = p.mass * p.gravity * p.length;
        // d/dtheta (mgl sin theta)^2 = 2 (mgl)^2 sin theta cos theta
        let slope = 2.0 * mgl * mgl * th.sin() * th.cos() + lambda;
        prop_assert!(slope.abs() <= 1e-12, "slope {slope:e}");
        Ok(())
    })
}

// ---------------------------------------------------------------------------
// Solver properties

fn toy_config(toy: &Toy) -> SolverConfig {
    SolverConfig { n_init: 1, n_max: 81, growth: 3, ..SolverConfig::for_grids(&toy.xgrid, &toy.ugrid) }
}

fn report_bits(r: &SolveReport) -> (Vec<u32>, Vec<u64>, String) {
    let cost = r.first_stage_policy.cost_to_go.values().iter().map(|v| v.to_bits()).collect();
    let ens: Vec<String> = (0..r.final_ensemble.len())
        .map(|k| format!("{:?}{}", r.final_ensemble.state(k), r.final_ensemble.is_feasible(k)))
        .collect();
    let meta = format!(
        "{:?} {} {:?} {:?} {}",
        r.status,
        r.terminal_horizon,
        r.metrics,
        r.achieved_average.map(f64::to_bits),
        ens.join(";")
    );
    (r.first_stage_policy.policy.clone(), cost, meta)
}

/// Extending a stage stack in pieces gives the same tables as one go, and a
/// solver resumed from a partial stack reports the same result.
pub fn check_resume(cases: u32) -> Check {
    run(cases, (any::<u64>(), 1usize..12, 1usize..12), |(seed, a, b)| {
        let toy = random_toy(seed);
        let cfg = toy_config(&toy);
        let mut whole = Solver::new(&toy.problem, &toy.xgrid, &toy.ugrid, cfg.clone()).unwrap();
        whole.extend_to(a + b);
        let mut parts = Solver::new(&toy.problem, &toy.xgrid, &toy.ugrid, cfg.clone()).unwrap();
        parts.extend_to(a);
        parts.extend_to(a + b);
        prop_assert!(whole.stages().iter().zip(parts.stages()).all(|(x, y)| same_table(x, y)));

        let fresh = Solver::new(&toy.problem, &toy.xgrid, &toy.ugrid, cfg).unwrap().run();
        let resumed = parts.run();
        match (fresh, resumed) {
            (Ok(f), Ok(r)) => prop_assert_eq!(report_bits(&f), report_bits(&r)),
            (f, r) => prop_assert_eq!(format!("{:?}", f.err()), format!("{:?}", r.err())),
        }
        Ok(())
    })
}

/// Every reported policy deviation is an exact multiple of the control spacing.
pub fn check_delta_mu_quantized() -> Check {
    for (d_x, d_u) in [(0.1, 0.1), (0.1, 0.05), (0.05, 0.04)] {
        let (p, xg, ug) = small_pendulum(d_x, d_u);
        let report = ucpadp::solve(&p, &xg, &ug, &SolverConfig::for_grids(&xg, &ug)).map_err(|e| e.to_string())?;
        for m in &report.metrics {
            for &dm in &m.delta_mu {
                let k = (dm / d_u).round();
                if dm != k * d_u {
                    return Err(format!("delta_mu {dm} is not a multiple of {d_u} (horizon {})", m.horizon));
                }
            }
        }
    }
    run(64, any::<u64>(), |seed| {
        let toy = random_toy(seed);
        let mut solver = Solver::new(&toy.problem, &toy.xgrid, &toy.ugrid, toy_config(&toy)).unwrap();
        solver.extend_to(9);
        let all: Vec<usize> = (0..toy.xgrid.len()).filter(|&k| solver.stages()[8].is_feasible(k)).collect();
        prop_assume!(!all.is_empty());
        for n in 1..=9 {
            let survivors: Vec<usize> = all.iter().copied().filter(|&k| solver.stages()[n - 1].is_feasible(k)).collect();
            if survivors.is_empty() {
                continue;
            }
            for dm in delta_mu(&solver.stages()[..n], &survivors, &toy.ugrid).unwrap() {
                prop_assert!(dm.is_infinite() || dm == (dm / TOY_U_D).round() * TOY_U_D, "{dm}");
            }
        }
        Ok(())
    })
}

/// Longer horizons never enlarge the feasible set, and ensemble entries that
/// fail stay failed.
pub fn check_feasibility_monotone(cases: u32) -> Check {
    run(cases, any::<u64>(), |seed| {
        let toy = random_toy(seed);
        let mut solver = Solver::new(&toy.problem, &toy.xgrid, &toy.ugrid, toy_config(&toy)).unwrap();
        solver.extend_to(12);
        for w in solver.stages().windows(2) {
            for k in 0..toy.xgrid.len() {
                prop_assert!(!w[1].is_feasible(k) || w[0].is_feasible(k), "node {k}");
            }
        }
        let table = &solver.stages()[11];
        let mut ens = ucpadp::ForwardEnsemble::seed(&toy.xgrid, table);
        for _ in 0..12 {
            let next = ucpadp::forward_step(&toy.problem, &toy.xgrid, &toy.ugrid, table, &ens);
            for k in 0..ens.len() {
                prop_assert!(ens.is_feasible(k) || !next.is_feasible(k));
            }
            ens = next;
        }
        Ok(())
    })
}

/// A deviation equal to its tolerance fails; the next float up passes.
pub fn check_strict_flags() -> Check {
    let (p, xg, ug) = small_pendulum(0.1, 0.1);
    let base = SolverConfig::for_grids(&xg, &ug);
    let report = ucpadp::solve(&p, &xg, &ug, &base).map_err(|e| e.to_string())?;
    let m = report.metrics.first().ok_or("no metrics")?.clone();
    if !(m.delta_mu.iter().chain(&m.delta_x).all(|v| v.is_finite() && *v > 0.0)) {
        return Err(format!("first round deviations not positive and finite: {m:?}"));
    }
    let at = |eps_mu: Vec<f64>, eps_x: Vec<f64>| {
        let cfg = SolverConfig { eps_mu, eps_x, n_max: base.n_init, ..base.clone() };
        let r = ucpadp::solve(&p, &xg, &ug, &cfg).unwrap();
        (r.metrics[0].mu_passed, r.metrics[0].x_passed)
    };
    let up = |v: &[f64]| v.iter().map(|x| f64::from_bits(x.to_bits() + 1)).collect::<Vec<_>>();
    let equal = at(m.delta_mu.clone(), m.delta_x.clone());
    let above = at(up(&m.delta_mu), up(&m.delta_x));
    if equal != (false, false) || above != (true, true) {
        return Err(format!("equal tolerance gave {equal:?}, next float up gave {above:?}"));
    }
    Ok(())
}

/// `|C_N| <= N max |f_c,R|` at every feasible node.
pub fn check_cost_bound(cases: u32) -> Check {
    run(cases, any::<u64>(), |seed| {
        let toy = random_toy(seed);
        let mut solver = Solver::new(&toy.problem, &toy.xgrid, &toy.ugrid, toy_config(&toy)).unwrap();
        solver.extend_to(10);
        let bound = solver.model().max_abs_cost();
        for (i, t) in solver.stages().iter().enumerate() {
            for &c in t.cost_to_go.values().iter().filter(|c| c.is_finite()) {
                prop_assert!(c.abs() <= (i + 1) as f64 * bound, "horizon {}: {c}", i + 1);
            }
        }
        Ok(())
    })
}

/// Sequential and parallel execution give bit-identical solves.
pub fn check_execution_determinism() -> Check {
    let (p, xg, ug) = small_pendulum(0.05, 0.05);
    let cfg = SolverConfig::for_grids(&xg, &ug);
    let solve = |exec| Solver::with_execution(&p, &xg, &ug, cfg.clone(), exec).unwrap().run().unwrap();
    let seq = report_bits(&solve(Execution::Sequential));
    let par = report_bits(&solve(Execution::Parallel));
    if seq != par {
        return Err("sequential and parallel solves differ".into());
    }
    Ok(())
}
