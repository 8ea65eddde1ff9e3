//! Quick verification battery behind `check --suite`.
//!
//! Each suite runs on fixed seeds so a report is reproducible; the full
//! tolerance battery lives in the acceptance test target.

use aggpolicy::counterexamples::{build_example1, regret_lower_bound, ExampleSpec};
use aggpolicy::{
    api_iterate, check_stationary_bellman, compatible_approx_check, directional_derivative, estimate_epsilon_phi,
    estimate_gradient, exact_gradient, fw_run, lift_policy, objective, project_simplex, AggregatedPolicyParams,
    Aggregation, ApiConfig, FwConfig, Mdp, MdpSampler, TabularPolicy, TieBreak,
};
use anyhow::Result;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Suite {
    Grad,
    Proj,
    Unbiased,
    Equiv,
    Bounds,
    All,
}

impl Suite {
    fn expand(self) -> Vec<Suite> {
        match self {
            Suite::All => vec![Suite::Grad, Suite::Proj, Suite::Unbiased, Suite::Equiv, Suite::Bounds],
            s => vec![s],
        }
    }

    fn name(self) -> &'static str {
        match self {
            Suite::Grad => "grad",
            Suite::Proj => "proj",
            Suite::Unbiased => "unbiased",
            Suite::Equiv => "equiv",
            Suite::Bounds => "bounds",
            Suite::All => "all",
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub suite: &'static str,
    pub check: &'static str,
    pub pass: bool,
    pub detail: String,
}

fn result(suite: Suite, check: &'static str, pass: bool, detail: String) -> CheckResult {
    CheckResult { suite: suite.name(), check, pass, detail }
}

pub fn run_suite(suite: Suite) -> Result<Vec<CheckResult>> {
    let mut out = Vec::new();
    for s in suite.expand() {
        match s {
            Suite::Grad => out.extend(grad()?),
            Suite::Proj => out.extend(proj()?),
            Suite::Unbiased => out.extend(unbiased()?),
            Suite::Equiv => out.extend(equiv()?),
            Suite::Bounds => out.extend(bounds()?),
            Suite::All => unreachable!("expanded above"),
        }
    }
    Ok(out)
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn distribution(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| rng.random::<f64>() + 1e-3).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|x| x / total).collect()
}

fn random_mdp(n: usize, k: usize, gamma: f64, rng: &mut ChaCha8Rng) -> Result<Mdp> {
    let rewards = DMatrix::from_fn(n, k, |_, _| rng.random_range(-1.0..1.0));
    let transitions = (0..n).map(|_| (0..k).map(|_| distribution(n, rng)).collect()).collect();
    let rho = DVector::from_vec(distribution(n, rng));
    Ok(Mdp::new(rewards, transitions, gamma, rho)?)
}

fn random_aggregation(n: usize, m: usize, rng: &mut ChaCha8Rng) -> Result<Aggregation> {
    let phi = (0..n).map(|s| if s < m { s } else { rng.random_range(0..m) }).collect();
    Ok(Aggregation::new(m, phi)?)
}

fn random_params(m: usize, k: usize, rng: &mut ChaCha8Rng) -> Result<AggregatedPolicyParams> {
    let rows: Vec<Vec<f64>> = (0..m).map(|_| distribution(k, rng)).collect();
    Ok(AggregatedPolicyParams::new(DMatrix::from_fn(m, k, |i, a| rows[i][a]))?)
}

fn grad() -> Result<Vec<CheckResult>> {
    let (mut fd_err, mut compat) = (0.0_f64, 0.0_f64);
    let h = 1e-5;
    for seed in 0..10 {
        let mut r = rng(100 + seed);
        let n = r.random_range(2..=12);
        let k = r.random_range(2..=4);
        let mdp = random_mdp(n, k, 0.9, &mut r)?;
        let agg = Aggregation::identity(n);
        let pi = lift_policy(&agg, &random_params(n, k, &mut r)?)?;
        let pi2 = lift_policy(&agg, &random_params(n, k, &mut r)?)?;
        let exact = directional_derivative(&exact_gradient(&mdp, &agg, &pi)?, &pi, &pi2)?;
        let d = pi2.probs() - pi.probs();
        let plus = TabularPolicy::new(pi.probs() + &d * h)?;
        let minus = TabularPolicy::new(pi.probs() - &d * h)?;
        let fd = (objective(&mdp, &plus)? - objective(&mdp, &minus)?) / (2.0 * h);
        fd_err = fd_err.max((exact - fd).abs() / exact.abs().max(1e-300));

        let m = r.random_range(1..=n);
        let coarse = random_aggregation(n, m, &mut r)?;
        let a = lift_policy(&coarse, &random_params(m, k, &mut r)?)?;
        let b = lift_policy(&coarse, &random_params(m, k, &mut r)?)?;
        compat = compat.max(compatible_approx_check(&mdp, &coarse, &a, &b)?);
    }
    Ok(vec![
        result(Suite::Grad, "finite differences", fd_err <= 1e-6, format!("max relative error {fd_err:.2e} (tol 1e-6)")),
        result(Suite::Grad, "compatible approximation", compat <= 1e-10, format!("max discrepancy {compat:.2e} (tol 1e-10)")),
    ])
}

/// Projection by enumerating supports and keeping the closest feasible
/// KKT point.
fn projection_oracle(y: &[f64]) -> Vec<f64> {
    let n = y.len();
    let mut best = (f64::INFINITY, vec![0.0; n]);
    for mask in 1u32..(1 << n) {
        let inside = |i: usize| mask >> i & 1 == 1;
        let count = mask.count_ones() as f64;
        let shift = ((0..n).filter(|&i| inside(i)).map(|i| y[i]).sum::<f64>() - 1.0) / count;
        let feasible = (0..n).all(|i| if inside(i) { y[i] - shift >= -1e-15 } else { y[i] - shift <= 1e-15 });
        if !feasible {
            continue;
        }
        let x: Vec<f64> = (0..n).map(|i| if inside(i) { y[i] - shift } else { 0.0 }).collect();
        let dist: f64 = x.iter().zip(y).map(|(a, b)| (a - b).powi(2)).sum();
        if dist < best.0 {
            best = (dist, x);
        }
    }
    best.1
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn proj() -> Result<Vec<CheckResult>> {
    let mut r = rng(200);
    let (mut oracle, mut idem, mut shift) = (0.0_f64, 0.0_f64, 0.0_f64);
    for _ in 0..1000 {
        let len = r.random_range(2..=10);
        let y: Vec<f64> = (0..len).map(|_| r.random_range(-2.0..2.0)).collect();
        let x = project_simplex(&y)?;
        oracle = oracle.max(max_diff(&x, &projection_oracle(&y)));
        idem = idem.max(max_diff(&project_simplex(&x)?, &x));
        let c = r.random_range(-2.0..2.0);
        let moved: Vec<f64> = y.iter().map(|v| v + c).collect();
        shift = shift.max(max_diff(&project_simplex(&moved)?, &x));
    }
    Ok(vec![
        result(Suite::Proj, "active-set oracle", oracle <= 1e-9, format!("max deviation {oracle:.2e} (tol 1e-9)")),
        result(Suite::Proj, "idempotence", idem <= 1e-12, format!("max deviation {idem:.2e} (tol 1e-12)")),
        result(Suite::Proj, "translation invariance", shift <= 1e-12, format!("max deviation {shift:.2e} (tol 1e-12)")),
    ])
}

fn unbiased() -> Result<Vec<CheckResult>> {
    let ex = build_example1(&ExampleSpec { m: 5, ..ExampleSpec::fig1() })?;
    let pi = lift_policy(&ex.aggregation, &ex.initial_params)?;
    let exact = exact_gradient(&ex.mdp, &ex.aggregation, &pi)?.aggregated;
    let est = estimate_gradient(&MdpSampler::new(&ex.mdp), &ex.aggregation, &ex.initial_params, 100_000, 300)?;
    let within = exact
        .iter()
        .zip(est.mean.iter().zip(est.std_err.iter()))
        .filter(|(g, (m, se))| (*m - *g).abs() <= 3.0 * *se)
        .count();
    let frac = within as f64 / exact.len() as f64;
    Ok(vec![result(
        Suite::Unbiased,
        "three standard errors",
        frac >= 0.99,
        format!("{within}/{} components within 3 SE from 10^5 samples", exact.len()),
    )])
}

fn equiv() -> Result<Vec<CheckResult>> {
    let compare = |mdp: &Mdp, agg: &Aggregation, theta: &AggregatedPolicyParams, tie: TieBreak| -> Result<f64> {
        let fw = fw_run(mdp, agg, theta, &FwConfig::new(0.1, tie, 50))?;
        let api = api_iterate(mdp, agg, &lift_policy(agg, theta)?, &ApiConfig::soft(0.1, tie, 50))?;
        Ok(fw.records.iter().zip(&api.records).map(|(a, b)| a.policy.max_abs_diff(&b.policy)).fold(0.0, f64::max))
    };
    let ex = build_example1(&ExampleSpec { m: 20, ..ExampleSpec::fig1() })?;
    let mut worst = compare(&ex.mdp, &ex.aggregation, &ex.initial_params, ex.spec.tiebreak)?;
    for seed in 0..3 {
        let mut r = rng(400 + seed);
        let n = r.random_range(2..=15);
        let k = r.random_range(2..=3);
        let m = r.random_range(1..=n);
        let mdp = random_mdp(n, k, 0.9, &mut r)?;
        let agg = random_aggregation(n, m, &mut r)?;
        let theta = random_params(m, k, &mut r)?;
        worst = worst.max(compare(&mdp, &agg, &theta, TieBreak::SmallestIndex)?);
    }
    Ok(vec![result(
        Suite::Equiv,
        "Frank-Wolfe equals soft API",
        worst <= 1e-12,
        format!("max policy discrepancy {worst:.2e} over 4 instances x 50 iterations (tol 1e-12)"),
    )])
}

fn bounds() -> Result<Vec<CheckResult>> {
    let ex = build_example1(&ExampleSpec::fig1())?;
    let n = ex.mdp.num_states();
    let cfg = ApiConfig::fixed(DVector::from_element(n, 1.0 / n as f64), ex.spec.tiebreak, 10);
    let trace = api_iterate(&ex.mdp, &ex.aggregation, &ex.initial_policy, &cfg)?;
    let floor = regret_lower_bound(ex.spec.gamma, ex.spec.eps_phi);
    let min_gap = trace.records.iter().map(|r| r.opt_gap).fold(f64::INFINITY, f64::min);
    let mut min_residual = f64::INFINITY;
    for r in &trace.records {
        let pi = lift_policy(&ex.aggregation, &r.policy)?;
        min_residual = min_residual.min(check_stationary_bellman(&ex.mdp, &ex.aggregation, &pi, 1e-6)?.residual);
    }
    let est = estimate_epsilon_phi(&ex.mdp, &ex.aggregation, 64, 16, &mut rng(500))?;
    Ok(vec![
        result(
            Suite::Bounds,
            "API regret floor",
            trace.cycle.is_some_and(|c| c.period == 2) && min_gap > floor,
            format!("cycle {:?}, min gap {min_gap:.4} vs floor {floor:.4}", trace.cycle.map(|c| c.period)),
        ),
        result(
            Suite::Bounds,
            "cycle iterates are not stationary",
            min_residual > 0.01,
            format!("min Bellman residual {min_residual:.4} (need > 0.01)"),
        ),
        result(
            Suite::Bounds,
            "aggregation error recovery",
            (est.value - ex.spec.eps_phi).abs() <= 1e-9,
            format!("estimate {:.12} vs construction {}", est.value, ex.spec.eps_phi),
        ),
    ])
}
