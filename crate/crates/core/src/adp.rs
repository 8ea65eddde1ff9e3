//! Approximate policy iteration with exact evaluation.
//!
//! One loop covers the three variants: fixed state weights with hard
//! updates, on-policy (occupancy) weights with hard updates, and on-policy
//! weights with soft updates `π_{t+1} = απ̃_{t+1} + (1-α)π_t`.

use crate::aggregation::{fit_aggregated_q, greedy_params, lift_policy, AggregatedPolicyParams, Aggregation};
use crate::error::{invalid, Result};
use crate::gradient::{gradient_from_evaluation, segment_gap};
use crate::mdp::{solve_optimal, Mdp, PolicyEvaluation, TabularPolicy, STOCHASTIC_TOL};
use crate::tiebreak::{TieBreak, DEFAULT_TIE_TOL};
use crate::trace::{detect_cycle, IterRecord, RunTrace, CYCLE_TOL};
use nalgebra::DVector;

#[derive(Debug, Clone, PartialEq)]
pub enum WeightMode {
    Fixed(DVector<f64>),
    /// `w = η_{π_t}` at iteration `t`.
    OnPolicy,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ApiConfig {
    pub weights: WeightMode,
    /// Soft update weight in `(0,1]`; 1 is a hard update.
    pub step_alpha: f64,
    pub tiebreak: TieBreak,
    pub tie_tol: f64,
    /// Number of policy updates; the trace holds `max_iters + 1` policies.
    pub max_iters: usize,
}

impl ApiConfig {
    /// Fixed-weight API with hard updates.
    pub fn fixed(weights: DVector<f64>, tiebreak: TieBreak, max_iters: usize) -> Self {
        Self { weights: WeightMode::Fixed(weights), step_alpha: 1.0, tiebreak, tie_tol: DEFAULT_TIE_TOL, max_iters }
    }

    /// On-policy-weighted API with hard updates.
    pub fn adaptive(tiebreak: TieBreak, max_iters: usize) -> Self {
        Self { weights: WeightMode::OnPolicy, step_alpha: 1.0, tiebreak, tie_tol: DEFAULT_TIE_TOL, max_iters }
    }

    /// On-policy-weighted API with soft updates.
    pub fn soft(alpha: f64, tiebreak: TieBreak, max_iters: usize) -> Self {
        Self { weights: WeightMode::OnPolicy, step_alpha: alpha, tiebreak, tie_tol: DEFAULT_TIE_TOL, max_iters }
    }

    pub fn algo_name(&self) -> &'static str {
        match (&self.weights, self.step_alpha == 1.0) {
            (WeightMode::Fixed(_), true) => "api",
            (WeightMode::Fixed(_), false) => "soft-api-fixed",
            (WeightMode::OnPolicy, true) => "api-adaptive",
            (WeightMode::OnPolicy, false) => "soft-api",
        }
    }

    pub fn validate(&self, num_states: usize) -> Result<()> {
        if !(self.step_alpha > 0.0 && self.step_alpha <= 1.0) {
            return Err(invalid(format!("API step must lie in (0,1], got {}", self.step_alpha)));
        }
        if let WeightMode::Fixed(w) = &self.weights {
            if w.len() != num_states {
                return Err(invalid(format!("fixed weights have length {}, expected {num_states}", w.len())));
            }
            if w.iter().any(|x| !(x.is_finite() && *x >= 0.0)) || (w.sum() - 1.0).abs() > STOCHASTIC_TOL {
                return Err(invalid("fixed weights must be a probability distribution over states"));
            }
        }
        Ok(())
    }
}

/// Run API from `pi1` (which must lie in `Π_φ`).
pub fn api_iterate(mdp: &Mdp, agg: &Aggregation, pi1: &TabularPolicy, cfg: &ApiConfig) -> Result<RunTrace> {
    agg.check_mdp(mdp)?;
    cfg.validate(mdp.num_states())?;
    let theta1 = agg.restrict_policy(pi1, STOCHASTIC_TOL)?;
    let (pi_star, _) = solve_optimal(mdp)?;
    let j_star = PolicyEvaluation::new(mdp, &pi_star)?.objective(mdp);
    let mut trace = RunTrace::new(cfg.algo_name(), j_star);

    let mut theta = theta1;
    for t in 1..=cfg.max_iters + 1 {
        let pi = lift_policy(agg, &theta)?;
        let eval = PolicyEvaluation::new(mdp, &pi)?;
        let j = eval.objective(mdp);
        let grad = gradient_from_evaluation(agg, &eval);
        let weights = match &cfg.weights {
            WeightMode::Fixed(w) => w,
            WeightMode::OnPolicy => eval.occupancy.as_vector(),
        };
        let fitted = fit_aggregated_q(agg, &eval.q, weights)?;
        trace.records.push(IterRecord {
            iter: t,
            policy: theta.clone(),
            objective: j,
            opt_gap: j_star - j,
            stationarity_gap: segment_gap(&grad.aggregated, theta.theta()),
            fitted_q: Some(fitted.q.clone()),
            zero_mass_segments: fitted.zero_mass_segments,
        });
        if t == cfg.max_iters + 1 {
            break;
        }
        let target: AggregatedPolicyParams = greedy_params(&fitted.q, cfg.tiebreak, cfg.tie_tol);
        theta = if cfg.step_alpha == 1.0 { target } else { theta.mix(&target, cfg.step_alpha) };
    }
    trace.iterations = cfg.max_iters;
    trace.cycle = detect_cycle(&trace, CYCLE_TOL);
    Ok(trace)
}
