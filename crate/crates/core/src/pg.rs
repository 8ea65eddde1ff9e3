//! Projected policy gradient and Frank-Wolfe policy gradient over `Π_φ`.

use crate::aggregation::{lift_policy, AggregatedPolicyParams, Aggregation};
use crate::error::{invalid, Result};
use crate::gradient::{gradient_from_evaluation, linear_maximizer, segment_gap, smoothness_constant};
use crate::mdp::{solve_optimal, Mdp, PolicyEvaluation, PolicyEvaluator, TabularPolicy, STOCHASTIC_TOL};
use crate::simplex::project_simplex_in_place;
use crate::tiebreak::{TieBreak, DEFAULT_TIE_TOL};
use crate::trace::{detect_cycle, IterRecord, RunTrace, CYCLE_TOL};
use nalgebra::DMatrix;
use std::time::{Duration, Instant};

pub const DEFAULT_STATIONARITY_TOL: f64 = 1e-8;
/// Slack below which a decrease in `J` is not counted as an ascent violation.
pub const ASCENT_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct PgConfig {
    pub step_alpha: f64,
    pub max_iters: usize,
    pub stationarity_tol: f64,
    /// Record every k-th iterate (the first and last are always kept).
    pub record_every: usize,
    /// Wall-clock cap; the run stops unconverged when it is exceeded.
    pub time_budget: Option<Duration>,
}

impl PgConfig {
    /// Step `1/L`, the largest step with a guaranteed ascent property.
    pub fn for_mdp(mdp: &Mdp, max_iters: usize) -> Self {
        let l = smoothness_constant(mdp);
        Self {
            step_alpha: if l > 0.0 { 1.0 / l } else { 1.0 },
            max_iters,
            stationarity_tol: DEFAULT_STATIONARITY_TOL,
            record_every: 1,
            time_budget: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.step_alpha.is_finite() && self.step_alpha > 0.0) {
            return Err(invalid(format!("step size must be positive, got {}", self.step_alpha)));
        }
        if !(self.stationarity_tol > 0.0) {
            return Err(invalid("stationarity tolerance must be positive"));
        }
        if self.record_every == 0 {
            return Err(invalid("record_every must be at least 1"));
        }
        Ok(())
    }
}

struct Evaluated {
    objective: f64,
    gbar: DMatrix<f64>,
    gap: f64,
}

/// Evaluation of lifted aggregated policies with reused buffers.
struct ThetaEvaluator<'a> {
    mdp: &'a Mdp,
    agg: &'a Aggregation,
    inner: PolicyEvaluator,
}

impl<'a> ThetaEvaluator<'a> {
    fn new(mdp: &'a Mdp, agg: &'a Aggregation) -> Self {
        Self { mdp, agg, inner: PolicyEvaluator::new(mdp) }
    }

    /// `J`, `ḡ` and the Frank-Wolfe gap at `θ`, with `ḡ` written into `gbar`.
    fn evaluate_into(&mut self, theta: &AggregatedPolicyParams, gbar: &mut DMatrix<f64>) -> Result<(f64, f64)> {
        let (agg, t) = (self.agg, theta.theta());
        self.inner.evaluate_with(self.mdp, |s, a| t[(agg.segment_of(s), a)])?;
        gbar.fill(0.0);
        let eta = self.inner.occupancy();
        for s in 0..agg.num_states() {
            let i = agg.segment_of(s);
            for a in 0..t.ncols() {
                gbar[(i, a)] += eta[s] * self.inner.q(s, a);
            }
        }
        Ok((self.inner.objective(self.mdp), segment_gap(gbar, t)))
    }

    fn evaluate(&mut self, theta: &AggregatedPolicyParams) -> Result<Evaluated> {
        let mut gbar = DMatrix::zeros(theta.num_segments(), theta.num_actions());
        let (objective, gap) = self.evaluate_into(theta, &mut gbar)?;
        Ok(Evaluated { objective, gbar, gap })
    }
}

fn optimal_objective(mdp: &Mdp) -> Result<f64> {
    let (pi_star, _) = solve_optimal(mdp)?;
    Ok(PolicyEvaluation::new(mdp, &pi_star)?.objective(mdp))
}

fn record(iter: usize, theta: &AggregatedPolicyParams, e: &Evaluated, j_star: f64) -> IterRecord {
    IterRecord {
        iter,
        policy: theta.clone(),
        objective: e.objective,
        opt_gap: j_star - e.objective,
        stationarity_gap: e.gap,
        fitted_q: None,
        zero_mass_segments: Vec::new(),
    }
}

/// One projected ascent step `θ(i,·) ← proj_Δ(θ(i,·) + α ḡ(i,·))`.
pub fn projected_step(theta: &AggregatedPolicyParams, gbar: &DMatrix<f64>, alpha: f64) -> Result<AggregatedPolicyParams> {
    let mut next = theta.theta().clone();
    step_in_place(&mut next, gbar, alpha, &mut Vec::new(), &mut Vec::new())?;
    Ok(AggregatedPolicyParams::from_matrix_unchecked(next))
}

fn step_in_place(
    theta: &mut DMatrix<f64>,
    gbar: &DMatrix<f64>,
    alpha: f64,
    row: &mut Vec<f64>,
    sorted: &mut Vec<f64>,
) -> Result<()> {
    for i in 0..theta.nrows() {
        row.clear();
        row.extend((0..theta.ncols()).map(|a| theta[(i, a)] + alpha * gbar[(i, a)]));
        project_simplex_in_place(row, sorted)?;
        for (a, &p) in row.iter().enumerate() {
            theta[(i, a)] = p;
        }
    }
    Ok(())
}

/// Projected policy gradient from `θ_1` until the Frank-Wolfe gap drops to
/// the tolerance or the iteration or time budget runs out.
pub fn pg_projected_run(
    mdp: &Mdp,
    agg: &Aggregation,
    theta1: &AggregatedPolicyParams,
    cfg: &PgConfig,
) -> Result<RunTrace> {
    agg.check_mdp(mdp)?;
    cfg.validate()?;
    AggregatedPolicyParams::new(theta1.theta().clone())?;
    let l = smoothness_constant(mdp);
    if l > 0.0 && cfg.step_alpha > 1.0 / l {
        log::warn!("step size {} exceeds 1/L = {}; ascent is not guaranteed", cfg.step_alpha, 1.0 / l);
    }
    let j_star = optimal_objective(mdp)?;
    let mut trace = RunTrace::new("pg", j_star);
    let started = Instant::now();

    let mut ev = ThetaEvaluator::new(mdp, agg);
    let mut theta = theta1.clone();
    let mut gbar = DMatrix::zeros(theta.num_segments(), theta.num_actions());
    let (mut row, mut sorted) = (Vec::new(), Vec::new());
    let mut prev_j = f64::NEG_INFINITY;
    let mut t = 1;
    loop {
        let (objective, gap) = ev.evaluate_into(&theta, &mut gbar)?;
        if objective < prev_j - ASCENT_SLACK {
            trace.ascent_violations += 1;
        }
        prev_j = objective;
        // checking the clock every iteration would dominate small instances
        let out_of_time = t % 1024 == 0 && cfg.time_budget.is_some_and(|b| started.elapsed() >= b);
        let done = gap <= cfg.stationarity_tol || t > cfg.max_iters || out_of_time;
        if done || t == 1 || t % cfg.record_every == 0 {
            let e = Evaluated { objective, gbar: gbar.clone(), gap };
            trace.records.push(record(t, &theta, &e, j_star));
        }
        if done {
            break;
        }
        let mut next = theta.into_matrix();
        step_in_place(&mut next, &gbar, cfg.step_alpha, &mut row, &mut sorted)?;
        theta = AggregatedPolicyParams::from_matrix_unchecked(next);
        t += 1;
    }
    trace.iterations = t - 1;
    if trace.ascent_violations > 0 {
        log::warn!("projected gradient decreased J on {} iterations", trace.ascent_violations);
    }
    Ok(trace)
}

#[derive(Debug, Clone)]
pub struct FwStep {
    pub next: TabularPolicy,
    /// Deterministic maximizer of the linearized objective over `Π_φ`.
    pub linearizer: TabularPolicy,
}

/// One Frank-Wolfe step from `π`: maximize the linearization, then mix.
pub fn fw_step(mdp: &Mdp, agg: &Aggregation, pi: &TabularPolicy, alpha: f64, tie: TieBreak) -> Result<FwStep> {
    check_alpha(alpha)?;
    agg.check_mdp(mdp)?;
    let theta = agg.restrict_policy(pi, STOCHASTIC_TOL)?;
    let eval = PolicyEvaluation::new(mdp, pi)?;
    let gbar = gradient_from_evaluation(agg, &eval).aggregated;
    let target = linear_maximizer(&gbar, tie, DEFAULT_TIE_TOL);
    Ok(FwStep { next: lift_policy(agg, &theta.mix(&target, alpha))?, linearizer: lift_policy(agg, &target)? })
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(invalid(format!("Frank-Wolfe step must lie in (0,1], got {alpha}")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct FwConfig {
    pub alpha: f64,
    pub tiebreak: TieBreak,
    pub tie_tol: f64,
    /// Number of updates; the trace holds `max_iters + 1` policies.
    pub max_iters: usize,
}

impl FwConfig {
    pub fn new(alpha: f64, tiebreak: TieBreak, max_iters: usize) -> Self {
        Self { alpha, tiebreak, tie_tol: DEFAULT_TIE_TOL, max_iters }
    }
}

pub fn fw_run(mdp: &Mdp, agg: &Aggregation, theta1: &AggregatedPolicyParams, cfg: &FwConfig) -> Result<RunTrace> {
    check_alpha(cfg.alpha)?;
    agg.check_mdp(mdp)?;
    AggregatedPolicyParams::new(theta1.theta().clone())?;
    let j_star = optimal_objective(mdp)?;
    let mut trace = RunTrace::new("fw", j_star);
    let mut ev = ThetaEvaluator::new(mdp, agg);
    let mut theta = theta1.clone();
    for t in 1..=cfg.max_iters + 1 {
        let e = ev.evaluate(&theta)?;
        trace.records.push(record(t, &theta, &e, j_star));
        if t == cfg.max_iters + 1 {
            break;
        }
        let target = linear_maximizer(&e.gbar, cfg.tiebreak, cfg.tie_tol);
        theta = theta.mix(&target, cfg.alpha);
    }
    trace.iterations = cfg.max_iters;
    trace.cycle = detect_cycle(&trace, CYCLE_TOL);
    Ok(trace)
}
