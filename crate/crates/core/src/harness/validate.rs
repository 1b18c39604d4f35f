//! Numerical and closed-loop self-checks, one per acceptance criterion.

use std::path::Path;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};

use super::{
    init_theta, mpc_dims, plant, run_loop, update_config, write_artifacts, ExperimentConfig,
    RunOutcome,
};
use crate::learner::{safe_update, DataPoint, UpdateMode};
use crate::mpc::{
    build_mpc_nlp, hull_containment_check, membership_residual, CondensedMpc, ThetaParams,
};
use crate::nlp::{solve, NlpBase, NlpProblem, ParametricNlp, PrimalDualPoint, SolverConfig};
use crate::policy::{
    deterministic_action, disturbed_action, exploration_covariance, exploration_stats,
    ExplorationConfig,
};
use crate::sensitivity::{first_order, second_order};
use crate::toy::DiscProblem;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub id: u8,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

impl CheckResult {
    /// `PASS [n] name (t s): detail`.
    pub fn line(&self) -> String {
        format!(
            "{} [{}] {} ({:.1} s): {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.id,
            self.name,
            self.seconds,
            self.detail
        )
    }
}

fn timed(
    id: u8,
    name: &'static str,
    f: impl FnOnce() -> Result<(bool, String), String>,
) -> CheckResult {
    let t0 = Instant::now();
    let (passed, detail) = f().unwrap_or_else(|e| (false, format!("error: {e}")));
    CheckResult {
        id,
        name,
        passed,
        detail,
        seconds: t0.elapsed().as_secs_f64(),
    }
}

fn solver(config: &ExperimentConfig, tau: f64) -> SolverConfig<f64> {
    SolverConfig {
        tau,
        residual_tolerance: config.residual_tolerance,
        ..SolverConfig::default()
    }
}

fn s0(config: &ExperimentConfig) -> DVector<f64> {
    ExperimentConfig::vector(&config.s0)
}

fn interior<P: NlpBase<f64> + ?Sized>(p: &P, z: &PrimalDualPoint<f64>) -> bool {
    p.ineq_values(&z.y).iter().all(|&h| h < 0.0) && z.mu.iter().all(|&m| m > 0.0)
}

const KKT_TOLERANCE: f64 = 1e-10;

/// Relaxed-KKT solves on randomized disc problems and case-1 MPC instances.
pub fn kkt_exactness(config: &ExperimentConfig) -> CheckResult {
    timed(1, "kkt exactness", || {
        let t0 = Instant::now();
        let cfg = solver(config, config.tau);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut worst = 0.0f64;
        let mut bad = 0;
        for _ in 0..20 {
            let theta = [
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
                rng.gen_range(0.25..2.0),
            ];
            let d = DVector::from_fn(2, |_, _| rng.gen_range(-0.5..0.5));
            let p = DiscProblem::new(theta).with_disturbance(&d);
            let rep = solve(&p, &cfg, None).map_err(|e| e.to_string())?;
            let r = p.residual(&rep.point).amax();
            worst = worst.max(r);
            bad += usize::from(r > KKT_TOLERANCE || !interior(&p, &rep.point));
        }
        let theta = init_theta(config).map_err(|e| e.to_string())?;
        let dims = mpc_dims(config);
        let mut states = vec![s0(config)];
        while states.len() < 5 {
            let r: f64 = rng.gen_range(0.5..0.95);
            let phi: f64 = rng.gen_range(30f64..75.0).to_radians();
            states.push(DVector::from_vec(vec![r * phi.cos(), r * phi.sin()]));
        }
        for s in &states {
            let p =
                build_mpc_nlp(&theta, s, dims, &DVector::zeros(2)).map_err(|e| e.to_string())?;
            let rep = solve(&p, &cfg, None).map_err(|e| e.to_string())?;
            let r = p.residual(&rep.point).amax();
            worst = worst.max(r);
            bad += usize::from(r > KKT_TOLERANCE || !interior(&p, &rep.point));
        }
        let secs = t0.elapsed().as_secs_f64();
        Ok((
            bad == 0 && secs < 1.0,
            format!("25 instances, worst ‖r‖∞ = {worst:.2e}, {bad} failing, {secs:.3} s"),
        ))
    })
}

fn rel_err(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm().max(1e-12)
}

/// Central differences of the primal policy output and of `∂g/∂d`.
struct FdReport {
    first_d: f64,
    first_theta: f64,
    second: f64,
}

fn fd_check<P, F>(
    nominal: &P,
    rebuild: F,
    n_theta: usize,
    cfg: &SolverConfig<f64>,
) -> Result<FdReport, String>
where
    P: ParametricNlp<f64>,
    F: Fn(usize, f64) -> P,
{
    let rep = solve(nominal, cfg, None).map_err(|e| e.to_string())?;
    let z = rep.point;
    let mut bundle = first_order(nominal, &z).map_err(|e| e.to_string())?;
    let d2 = second_order(nominal, &z, &mut bundle).to_vec();
    let n_a = nominal.n_d();
    let g = |p: &P| -> Result<(DVector<f64>, PrimalDualPoint<f64>), String> {
        let r = solve(p, cfg, Some(&z)).map_err(|e| e.to_string())?;
        Ok((r.point.y.rows(0, n_a).into_owned(), r.point))
    };

    let h = 1e-5;
    let mut fd_d = DMatrix::zeros(n_a, n_a);
    let mut fd_d2 = vec![DMatrix::zeros(n_a, n_a); n_a];
    for i in 0..n_a {
        let mut dp = DVector::zeros(n_a);
        dp[i] = h;
        let plus = nominal.with_disturbance(&dp);
        let minus = nominal.with_disturbance(&-&dp);
        let (gp, zp) = g(&plus)?;
        let (gm, zm) = g(&minus)?;
        fd_d.set_column(i, &((gp - gm) / (2.0 * h)));
        let bp = first_order(&plus, &zp).map_err(|e| e.to_string())?;
        let bm = first_order(&minus, &zm).map_err(|e| e.to_string())?;
        let col = (&bp.dg_dd - &bm.dg_dd) / (2.0 * h);
        for (k, m) in fd_d2.iter_mut().enumerate() {
            for j in 0..n_a {
                m[(j, i)] = col[(k, j)];
            }
        }
    }
    let mut fd_t = DMatrix::zeros(n_a, n_theta);
    for p in 0..n_theta {
        let (gp, _) = g(&rebuild(p, h))?;
        let (gm, _) = g(&rebuild(p, -h))?;
        fd_t.set_column(p, &((gp - gm) / (2.0 * h)));
    }
    let an2 = DMatrix::from_fn(n_a * n_a, n_a, |r, c| d2[r / n_a][(r % n_a, c)]);
    let fd2 = DMatrix::from_fn(n_a * n_a, n_a, |r, c| fd_d2[r / n_a][(r % n_a, c)]);
    Ok(FdReport {
        first_d: rel_err(&fd_d, &bundle.dg_dd),
        first_theta: rel_err(&fd_t, &bundle.dg_dtheta),
        second: rel_err(&fd2, &an2),
    })
}

/// Analytic first- and second-order sensitivities against finite differences
/// on the disc problem and the case-1 scenario MPC.
pub fn sensitivity_consistency(config: &ExperimentConfig) -> CheckResult {
    timed(2, "sensitivity consistency", || {
        let t0 = Instant::now();
        let cfg = solver(config, config.tau);
        let base = [1.2, 0.0, 1.0];
        let disc = fd_check(
            &DiscProblem::new(base),
            |p, h| {
                let mut t = base;
                t[p] += h;
                DiscProblem::new(t)
            },
            3,
            &cfg,
        )?;
        let theta = init_theta(config).map_err(|e| e.to_string())?;
        let dims = mpc_dims(config);
        let s = s0(config);
        let zero = DVector::zeros(2);
        let flat = theta.flatten();
        let mpc = build_mpc_nlp(&theta, &s, dims, &zero).map_err(|e| e.to_string())?;
        let mpc_rep = fd_check(
            &mpc,
            |p, h| {
                let mut v = flat.clone();
                v[p] += h;
                let t = ThetaParams::unflatten(&v, theta.layout()).expect("layout");
                build_mpc_nlp(&t, &s, dims, &zero).expect("valid")
            },
            flat.len(),
            &cfg,
        )?;
        let secs = t0.elapsed().as_secs_f64();
        let first = disc
            .first_d
            .max(disc.first_theta)
            .max(mpc_rep.first_d)
            .max(mpc_rep.first_theta);
        let second = disc.second.max(mpc_rep.second);
        Ok((
            first <= 1e-5 && second <= 1e-4 && secs < 10.0,
            format!(
                "first-order rel err {first:.2e} (disc d {:.1e}, θ {:.1e}; mpc d {:.1e}, θ {:.1e}), second-order {second:.2e}, {secs:.2} s",
                disc.first_d, disc.first_theta, mpc_rep.first_d, mpc_rep.first_theta
            ),
        ))
    })
}

/// Monte-Carlo exploration on the disc problem.
struct McResult {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
    draws: usize,
}

fn monte_carlo(
    theta: [f64; 3],
    explore: &ExplorationConfig<f64>,
    draws: usize,
    seed: u64,
) -> Result<(McResult, DMatrix<f64>, DVector<f64>, DMatrix<f64>), String> {
    let p = DiscProblem::new(theta);
    let (pi, rep) = deterministic_action(&p, &explore.solver, None).map_err(|e| e.to_string())?;
    let (stats, _) = exploration_stats(&p, &rep.point, explore).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_a = pi.len();
    let mut sum = DVector::zeros(n_a);
    let mut outer = DMatrix::zeros(n_a, n_a);
    for _ in 0..draws {
        let d = explore
            .sample_disturbance(&mut rng)
            .map_err(|e| e.to_string())?;
        let (a, _) =
            disturbed_action(&p, &rep.point, &d, &explore.solver).map_err(|e| e.to_string())?;
        let e = a - &pi;
        outer += &e * e.transpose();
        sum += e;
    }
    let n = draws as f64;
    let mean = sum / n;
    let cov = (outer - &mean * mean.transpose() * n) / (n - 1.0);
    let base_cov = exploration_covariance(&stats.dg_dd, &explore.shape);
    Ok((McResult { mean, cov, draws }, stats.m, stats.c, base_cov))
}

const DRAWS: usize = 100_000;
const DISC_THETA: [f64; 3] = [1.2, 0.0, 1.0];

fn disc_explore(config: &ExperimentConfig, sigma: f64, tau: f64) -> ExplorationConfig<f64> {
    ExplorationConfig {
        sigma,
        shape: DMatrix::identity(2, 2),
        m_mode: config.m_mode(),
        corrections: true,
        solver: solver(config, tau),
    }
}

/// Sampled mean and covariance of the exploration against `c` and `σM⁻¹`.
pub fn exploration_estimators(config: &ExperimentConfig) -> CheckResult {
    timed(3, "exploration mean and covariance", || {
        let t0 = Instant::now();
        let explore = disc_explore(config, 1e-3, 1e-2);
        let (mc, _, c, base_cov) = monte_carlo(DISC_THETA, &explore, DRAWS, config.seed)?;
        let se = (mc.cov.trace() / mc.draws as f64).sqrt();
        let mean_err = (&mc.mean - &c).norm();
        let mean_tol = (3.0 * se).max(0.1 * c.norm() + 1e-6);
        let target = base_cov * explore.sigma;
        let cov_err = (&mc.cov - &target).norm() / target.norm();
        let secs = t0.elapsed().as_secs_f64();
        Ok((
            mean_err <= mean_tol && cov_err <= 0.15 && secs < 60.0,
            format!(
                "‖mean − c‖ = {mean_err:.2e} (tol {mean_tol:.2e}, ‖c‖ = {:.2e}), rel cov err {cov_err:.3}, {secs:.1} s",
                c.norm()
            ),
        ))
    })
}

/// `‖(1/σ) M cov(e) − I‖_F` decreases strictly as `σ` shrinks.
pub fn covariance_limit(config: &ExperimentConfig) -> CheckResult {
    timed(4, "covariance limit", || {
        let mut vals = Vec::new();
        for (i, sigma) in [1e-2, 1e-3, 1e-4].into_iter().enumerate() {
            let explore = disc_explore(config, sigma, 1e-2);
            let (mc, m, _, _) = monte_carlo(DISC_THETA, &explore, DRAWS, config.seed + i as u64)?;
            vals.push((&m * &mc.cov / sigma - DMatrix::identity(2, 2)).norm());
        }
        let ok = vals.windows(2).all(|w| w[1] < w[0]);
        Ok((
            ok,
            format!(
                "σ = 1e-2, 1e-3, 1e-4 → {:.3e}, {:.3e}, {:.3e}",
                vals[0], vals[1], vals[2]
            ),
        ))
    })
}

/// Range-space residual of `∂g/∂θ` at an active and at an inactive disc.
pub fn range_diagnostic(config: &ExperimentConfig) -> CheckResult {
    timed(5, "policy gradient range diagnostic", || {
        let explore = disc_explore(config, config.sigma, 1e-6);
        let report = |theta: [f64; 3]| -> Result<Vec<f64>, String> {
            let p = DiscProblem::new(theta);
            let (_, rep) =
                deterministic_action(&p, &explore.solver, None).map_err(|e| e.to_string())?;
            let bundle = first_order(&p, &rep.point).map_err(|e| e.to_string())?;
            Ok(crate::policy::range_diagnostic(&bundle, &explore).residuals)
        };
        let active = report([2.0, 0.0, 1.0])?;
        let inner = report([0.3, 0.2, 1.0])?;
        let ok = active[2] > 10.0 * active[0].max(active[1]) && inner.iter().all(|&r| r <= 1e-6);
        Ok((
            ok,
            format!(
                "active θ = (2, 0, 1): residuals {:.2e}, {:.2e}, {:.2e}; interior: max {:.2e}",
                active[0],
                active[1],
                active[2],
                inner.iter().fold(0.0f64, |m, &v| m.max(v))
            ),
        ))
    })
}

/// Random point of `Conv(W)` with uniform Dirichlet weights.
fn hull_point<R: Rng>(vertices: &[DVector<f64>], rng: &mut R) -> DVector<f64> {
    let w: Vec<f64> = (0..vertices.len()).map(|_| Exp1.sample(rng)).collect();
    let total: f64 = w.iter().sum();
    vertices
        .iter()
        .zip(&w)
        .fold(DVector::zeros(vertices[0].len()), |acc, (v, &wi)| {
            acc + v * (wi / total)
        })
}

/// Nominal model under the ancillary feedback stays within the scenario hull.
pub fn hull_containment(config: &ExperimentConfig) -> CheckResult {
    timed(6, "scenario hull containment", || {
        let t0 = Instant::now();
        let theta = init_theta(config).map_err(|e| e.to_string())?;
        let cfg = solver(config, config.tau);
        let mpc =
            CondensedMpc::new(&theta, &s0(config), mpc_dims(config)).map_err(|e| e.to_string())?;
        let start = mpc
            .interior_start(None, cfg.tau)
            .map_err(|e| e.to_string())?;
        let rep = solve(&mpc, &cfg, Some(&start)).map_err(|e| e.to_string())?;
        let states = mpc.states(&rep.point.y);
        let inputs = mpc.inputs(&rep.point.y)[0].clone();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let noise: Vec<Vec<DVector<f64>>> = (0..1000)
            .map(|_| vec![hull_point(&theta.w.vertices, &mut rng); inputs.len()])
            .collect();
        let report = hull_containment_check(&theta, &states, &inputs, &noise);
        let secs = t0.elapsed().as_secs_f64();
        Ok((
            report.violations == 0 && secs < 60.0,
            format!(
                "{} sequences, {} checks, {} violations (max {:.1e}), {secs:.2} s",
                report.sequences, report.checks, report.violations, report.max_violation
            ),
        ))
    })
}

/// Closed-loop runs shared by the learning and safety checks.
#[derive(Debug)]
pub struct ClosedLoopRuns {
    pub case1: Vec<(ExperimentConfig, RunOutcome, f64)>,
    pub case2: Vec<(ExperimentConfig, RunOutcome, f64)>,
}

pub const SEEDS: u64 = 3;

/// Runs cases 1 and 2 for [`SEEDS`] seeds starting at `config.seed` and
/// writes artifacts to `<out_dir>/validate/case<c>_seed<s>`.
pub fn closed_loop_runs(config: &ExperimentConfig) -> Result<ClosedLoopRuns, String> {
    let mut out = ClosedLoopRuns {
        case1: Vec::new(),
        case2: Vec::new(),
    };
    for case in [1u8, 2] {
        for k in 0..SEEDS {
            let mut cfg = config.clone();
            cfg.apply_case(case).map_err(|e| e.to_string())?;
            cfg.seed = config.seed + k;
            cfg.out_dir = Path::new(&config.out_dir)
                .join("validate")
                .join(format!("case{case}_seed{}", cfg.seed))
                .to_string_lossy()
                .into_owned();
            let t0 = Instant::now();
            let run = run_loop(&cfg);
            let secs = t0.elapsed().as_secs_f64();
            write_artifacts(
                Path::new(&cfg.out_dir),
                &cfg,
                &run.trace,
                run.error.as_ref(),
            )
            .map_err(|e| e.to_string())?;
            let slot = if case == 1 {
                &mut out.case1
            } else {
                &mut out.case2
            };
            slot.push((cfg, run, secs));
        }
    }
    Ok(out)
}

fn run_errors(runs: &[(ExperimentConfig, RunOutcome, f64)]) -> Vec<String> {
    runs.iter()
        .filter_map(|(c, r, _)| r.error.as_ref().map(|e| format!("seed {}: {e}", c.seed)))
        .collect()
}

/// Counts nonzero violation entries in a written safety report.
fn csv_violations(dir: &str) -> Result<usize, String> {
    let mut rd = csv::Reader::from_path(Path::new(dir).join("safety_report.csv"))
        .map_err(|e| e.to_string())?;
    let headers = rd.headers().map_err(|e| e.to_string())?.clone();
    let cols: Vec<usize> = ["membership_violations", "state_violations"]
        .iter()
        .map(|n| {
            headers
                .iter()
                .position(|h| h == *n)
                .ok_or(format!("missing column {n}"))
        })
        .collect::<Result<_, _>>()?;
    let mut bad = 0;
    for rec in rd.records() {
        let rec = rec.map_err(|e| e.to_string())?;
        for &c in &cols {
            bad += usize::from(rec[c].trim() != "0");
        }
    }
    Ok(bad)
}

/// Data planted outside `W` force a feasible enlargement of the polytope.
pub fn planted_outlier(config: &ExperimentConfig) -> Result<(bool, String), String> {
    let theta = init_theta(config).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut data: Vec<DataPoint<f64>> = (0..20)
        .map(|_| {
            let s = DVector::from_fn(2, |_, _| rng.gen_range(-0.5..0.5));
            let a = DVector::from_fn(2, |_, _| rng.gen_range(-0.2..0.2));
            let w = hull_point(&theta.w.vertices, &mut rng) * 0.9;
            let s_plus = theta.nominal_step(&s, &a) + w;
            DataPoint { s, a, s_plus }
        })
        .collect();
    let s = s0(config);
    let a = theta.u_bar.clone();
    let s_plus = theta.nominal_step(&s, &a) + DVector::from_vec(vec![0.15, 0.0]);
    data.push(DataPoint { s, a, s_plus });
    let before = data
        .iter()
        .filter(|p| !membership_residual(&theta, &p.s, &p.a, &p.s_plus).is_feasible())
        .count();
    let mut ucfg = update_config(config);
    ucfg.mode = UpdateMode::SafeConstrained;
    let g = DVector::zeros(theta.layout().len());
    let out = safe_update(&theta, &g, &data, &ucfg).map_err(|e| e.to_string())?;
    let after = data
        .iter()
        .filter(|p| !membership_residual(&out.theta, &p.s, &p.a, &p.s_plus).is_feasible())
        .count();
    Ok((
        before == 1 && after == 0,
        format!(
            "planted outlier: {before} outside before, {after} after, objective {:.3e}",
            out.objective
        ),
    ))
}

/// Every retained transition stays inside `W` after each update.
pub fn safe_update_check(config: &ExperimentConfig, runs: &ClosedLoopRuns) -> CheckResult {
    timed(7, "safe update", || {
        let errors = run_errors(&runs.case1);
        let mut nonzero = 0;
        let mut rows = 0;
        for (c, r, _) in &runs.case1 {
            nonzero += csv_violations(&c.out_dir)?;
            rows += r.trace.safety.len();
        }
        let (planted_ok, planted) = planted_outlier(config)?;
        Ok((
            errors.is_empty() && nonzero == 0 && planted_ok,
            format!(
                "{} case-1 runs, {rows} safety rows, {nonzero} nonzero violation entries; {planted}{}",
                runs.case1.len(),
                if errors.is_empty() { String::new() } else { format!("; aborted: {}", errors.join("; ")) }
            ),
        ))
    })
}

/// Pooled improvement statistic over seeds: `(first mean, last mean, SE)`.
pub fn improvement(traces: &[&[f64]], window: usize) -> Option<(f64, f64, f64)> {
    let mut first = Vec::new();
    let mut last = Vec::new();
    for j in traces {
        if j.len() < 2 * window {
            return None;
        }
        first.extend_from_slice(&j[..window]);
        last.extend_from_slice(&j[j.len() - window..]);
    }
    let stats = |v: &[f64]| {
        let n = v.len() as f64;
        let m = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
        (m, var / n)
    };
    let (mf, vf) = stats(&first);
    let (ml, vl) = stats(&last);
    Some((mf, ml, (vf + vl).sqrt()))
}

fn learning(
    runs: &[(ExperimentConfig, RunOutcome, f64)],
    state_bound: f64,
) -> Result<(bool, String), String> {
    let errors = run_errors(runs);
    let traces: Vec<&[f64]> = runs
        .iter()
        .map(|(_, r, _)| r.trace.j_mean.as_slice())
        .collect();
    let (mf, ml, se) = improvement(&traces, 10).ok_or("runs too short for a 10-step window")?;
    let state_viol: usize = runs
        .iter()
        .flat_map(|(_, r, _)| r.trace.safety.iter())
        .map(|row| row.state_violations + row.membership_violations)
        .sum();
    let max_norm = runs
        .iter()
        .flat_map(|(_, r, _)| r.trace.safety.iter())
        .map(|row| row.max_state_norm)
        .fold(0.0f64, f64::max);
    let slowest = runs.iter().map(|(_, _, s)| *s).fold(0.0f64, f64::max);
    let ok = errors.is_empty()
        && mf - ml >= 3.0 * se
        && state_viol == 0
        && max_norm <= state_bound
        && slowest < 1800.0;
    Ok((
        ok,
        format!(
            "J first 10 = {mf:.5}, last 10 = {ml:.5}, drop {:.5} vs 3·SE {:.5}; violations {state_viol}, max ‖s‖ {max_norm:.6}; slowest run {slowest:.0} s{}",
            mf - ml,
            3.0 * se,
            if errors.is_empty() { String::new() } else { format!("; aborted: {}", errors.join("; ")) }
        ),
    ))
}

pub fn learning_case1(runs: &ClosedLoopRuns) -> CheckResult {
    timed(8, "closed-loop learning, case 1", || {
        learning(&runs.case1, 1.0)
    })
}

pub fn learning_case2(runs: &ClosedLoopRuns) -> CheckResult {
    let bound = runs
        .case2
        .first()
        .map(|(c, _, _)| 1.0 + c.clip_radius)
        .unwrap_or(1.0);
    timed(9, "closed-loop learning, case 2", || {
        learning(&runs.case2, bound)
    })
}

/// The learned nominal model does not converge to the real one.
pub fn non_identification(runs: &ClosedLoopRuns) -> CheckResult {
    timed(10, "not system identification", || {
        let mut parts = Vec::new();
        let mut ok = !runs.case1.is_empty();
        for (cfg, run, _) in &runs.case1 {
            let th = run.trace.thetas.last().ok_or("empty trace")?;
            let gap = (&th.a0 - &plant(cfg).a_real).norm();
            let improved =
                improvement(&[run.trace.j_mean.as_slice()], 10).is_some_and(|(f, l, _)| l < f);
            ok &= gap > 1e-3 && improved && run.error.is_none();
            parts.push(format!(
                "seed {}: ‖A0 − A‖ = {gap:.4}, improved {improved}",
                cfg.seed
            ));
        }
        Ok((ok, parts.join("; ")))
    })
}

/// Criteria that need no closed-loop run.
pub fn validate_numerics(config: &ExperimentConfig) -> Vec<CheckResult> {
    vec![
        kkt_exactness(config),
        sensitivity_consistency(config),
        exploration_estimators(config),
        covariance_limit(config),
        range_diagnostic(config),
        hull_containment(config),
    ]
}

/// Criteria that use the shared closed-loop runs.
pub fn validate_closed_loop(config: &ExperimentConfig, runs: &ClosedLoopRuns) -> Vec<CheckResult> {
    vec![
        safe_update_check(config, runs),
        learning_case1(runs),
        learning_case2(runs),
        non_identification(runs),
    ]
}

/// All ten criteria, closed-loop runs included.
pub fn validate_suite(config: &ExperimentConfig) -> Vec<CheckResult> {
    let mut out = validate_numerics(config);
    match closed_loop_runs(config) {
        Ok(runs) => out.extend(validate_closed_loop(config, &runs)),
        Err(e) => {
            for (id, name) in [
                (7, "safe update"),
                (8, "closed-loop learning, case 1"),
                (9, "closed-loop learning, case 2"),
                (10, "not system identification"),
            ] {
                out.push(CheckResult {
                    id,
                    name,
                    passed: false,
                    detail: format!("closed-loop runs failed: {e}"),
                    seconds: 0.0,
                });
            }
        }
    }
    out
}
