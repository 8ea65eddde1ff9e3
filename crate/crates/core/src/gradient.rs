//! Exact policy gradients, the Frank-Wolfe stationarity gap, the
//! approximate Bellman certificate for stationary points, and the compatible
//! function approximation identity.

use crate::aggregation::{fit_aggregated_q, lift_policy, AggregatedPolicyParams, Aggregation};
use crate::error::{shape, Result};
use crate::mdp::{bellman_apply, Mdp, PolicyEvaluation, TabularPolicy, STOCHASTIC_TOL};
use crate::tiebreak::{select_action, TieBreak, DEFAULT_TIE_TOL};
use nalgebra::DMatrix;

/// `G(s,a) = ∂J/∂π(s,a)` and its segment sums `ḡ(i,a) = ∂J/∂θ(i,a)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientTable {
    pub full: DMatrix<f64>,
    pub aggregated: DMatrix<f64>,
}

pub fn exact_gradient(mdp: &Mdp, agg: &Aggregation, pi: &TabularPolicy) -> Result<GradientTable> {
    agg.check_mdp(mdp)?;
    let eval = PolicyEvaluation::new(mdp, pi)?;
    Ok(gradient_from_evaluation(agg, &eval))
}

pub(crate) fn gradient_from_evaluation(agg: &Aggregation, eval: &PolicyEvaluation) -> GradientTable {
    let q = eval.q.as_matrix();
    let eta = eval.occupancy.as_vector();
    let full = DMatrix::from_fn(q.nrows(), q.ncols(), |s, a| eta[s] * q[(s, a)]);
    let aggregated = agg.sum_over_segments(&full);
    GradientTable { full, aggregated }
}

/// `⟨∇J(π), π' - π⟩`.
pub fn directional_derivative(grad: &GradientTable, pi: &TabularPolicy, pi2: &TabularPolicy) -> Result<f64> {
    let g = &grad.full;
    if pi.probs().shape() != g.shape() || pi2.probs().shape() != g.shape() {
        return Err(shape("gradient and policies must share one state-action shape"));
    }
    Ok(g.component_mul(&(pi2.probs() - pi.probs())).sum())
}

/// `Σ_i max_a ḡ(i,a) - Σ_i Σ_a ḡ(i,a) θ(i,a)`.
pub(crate) fn segment_gap(gbar: &DMatrix<f64>, theta: &DMatrix<f64>) -> f64 {
    let best: f64 = gbar.row_iter().map(|r| r.max()).sum();
    let current = gbar.component_mul(theta).sum();
    (best - current).max(0.0)
}

/// Frank-Wolfe gap `max_{π'∈Π_φ} ⟨∇J(π), π' - π⟩`; zero exactly at stationary points.
pub fn stationarity_gap(mdp: &Mdp, agg: &Aggregation, pi: &TabularPolicy) -> Result<f64> {
    let theta = agg.restrict_policy(pi, STOCHASTIC_TOL)?;
    let grad = exact_gradient(mdp, agg, pi)?;
    Ok(segment_gap(&grad.aggregated, theta.theta()))
}

/// Per-segment maximizer of a linear objective over `Π_φ`.
pub fn linear_maximizer(gbar: &DMatrix<f64>, tie: TieBreak, tie_tol: f64) -> AggregatedPolicyParams {
    let actions: Vec<usize> = gbar
        .row_iter()
        .map(|r| {
            let row: Vec<f64> = r.iter().copied().collect();
            select_action(&row, tie, tie_tol)
        })
        .collect();
    AggregatedPolicyParams::deterministic(&actions, gbar.ncols()).expect("argmax is a valid action")
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BellmanCertificate {
    /// `|max_{π'∈Π_φ} E_η[T_{π'}V_π] - E_η[V_π]|` with `η = η_π`.
    pub residual: f64,
    pub certified: bool,
}

/// Approximate Bellman equation for stationary points, checked at `π`.
pub fn check_stationary_bellman(mdp: &Mdp, agg: &Aggregation, pi: &TabularPolicy, tol: f64) -> Result<BellmanCertificate> {
    agg.restrict_policy(pi, STOCHASTIC_TOL)?;
    let eval = PolicyEvaluation::new(mdp, pi)?;
    let eta = eval.occupancy.as_vector();
    // maximize Σ_s η(s)(T_π' V)(s) segment by segment
    let weighted = DMatrix::from_fn(mdp.num_states(), mdp.num_actions(), |s, a| eta[s] * eval.q.get(s, a));
    let best = linear_maximizer(&agg.sum_over_segments(&weighted), TieBreak::SmallestIndex, DEFAULT_TIE_TOL);
    let pi_best = lift_policy(agg, &best)?;
    let backed_up = bellman_apply(mdp, &eval.values, Some(&pi_best))?;
    let lhs = eta.dot(backed_up.as_vector());
    let rhs = eta.dot(eval.values.as_vector());
    let residual = (lhs - rhs).abs();
    Ok(BellmanCertificate { residual, certified: residual <= tol })
}

/// `|⟨∇J(π), π' - π⟩ - ⟨Q̂_π, π' - π⟩_{η_π×1}|` with `Q̂_π` the `η_π`-weighted fit.
pub fn compatible_approx_check(mdp: &Mdp, agg: &Aggregation, pi: &TabularPolicy, pi2: &TabularPolicy) -> Result<f64> {
    agg.restrict_policy(pi, STOCHASTIC_TOL)?;
    agg.restrict_policy(pi2, STOCHASTIC_TOL)?;
    let eval = PolicyEvaluation::new(mdp, pi)?;
    let grad = gradient_from_evaluation(agg, &eval);
    let lhs = directional_derivative(&grad, pi, pi2)?;
    let eta = eval.occupancy.as_vector();
    let qhat = fit_aggregated_q(agg, &eval.q, eta)?.q;
    let diff = pi2.probs() - pi.probs();
    let mut rhs = 0.0;
    for s in 0..mdp.num_states() {
        let i = agg.segment_of(s);
        for a in 0..mdp.num_actions() {
            rhs += eta[s] * qhat.get(i, a) * diff[(s, a)];
        }
    }
    Ok((lhs - rhs).abs())
}

/// Lipschitz constant of `∇J`: `2γ|A|‖r‖_∞ / (1-γ)²`.
pub fn smoothness_constant(mdp: &Mdp) -> f64 {
    let g = mdp.gamma();
    2.0 * g * mdp.num_actions() as f64 * mdp.reward_sup() / ((1.0 - g) * (1.0 - g))
}
