//! Hard state aggregation: the partition `φ`, the policy and value classes it
//! induces, least-squares fitting into the value class, greedy and softmax
//! policy extraction, and the aggregation-error diagnostics.

use crate::error::{invalid, precondition, shape, Error, Result};
use crate::mdp::{evaluate_policy, occupancy, q_values, solve_optimal, Mdp, QTable, TabularPolicy};
use crate::tiebreak::{select_action, TieBreak};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Segment mass at or below which the weighted fit falls back to a plain mean.
pub const ZERO_MASS: f64 = 1e-300;

/// Surjective map from states onto segments `0..m`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Aggregation {
    phi: Vec<usize>,
    segments: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AggregationFile {
    pub num_segments: usize,
    pub phi: Vec<usize>,
}

impl Aggregation {
    pub fn new(num_segments: usize, phi: Vec<usize>) -> Result<Self> {
        if phi.is_empty() {
            return Err(shape("aggregation over an empty state set"));
        }
        let mut segments = vec![Vec::new(); num_segments];
        for (s, &i) in phi.iter().enumerate() {
            let seg = segments
                .get_mut(i)
                .ok_or_else(|| invalid(format!("phi[{s}] = {i} is outside 0..{num_segments}")))?;
            seg.push(s);
        }
        if let Some(i) = segments.iter().position(Vec::is_empty) {
            return Err(invalid(format!("segment {i} is empty; phi must be onto 0..{num_segments}")));
        }
        Ok(Self { phi, segments })
    }

    /// Every state in its own segment.
    pub fn identity(num_states: usize) -> Self {
        Self::new(num_states, (0..num_states).collect()).expect("identity map is a partition")
    }

    /// All states in one segment.
    pub fn single(num_states: usize) -> Self {
        Self::new(1, vec![0; num_states]).expect("constant map is a partition")
    }

    pub fn from_file(file: AggregationFile) -> Result<Self> {
        Self::new(file.num_segments, file.phi)
    }

    pub fn to_file(&self) -> AggregationFile {
        AggregationFile { num_segments: self.num_segments(), phi: self.phi.clone() }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|source| Error::Io { path: path.display().to_string(), source })?;
        Self::from_file(serde_json::from_str(&text)?)
    }

    pub fn num_states(&self) -> usize {
        self.phi.len()
    }

    pub fn num_segments(&self) -> usize {
        self.segments.len()
    }

    pub fn segment_of(&self, s: usize) -> usize {
        self.phi[s]
    }

    pub fn phi(&self) -> &[usize] {
        &self.phi
    }

    pub fn segment(&self, i: usize) -> &[usize] {
        &self.segments[i]
    }

    pub fn segments(&self) -> &[Vec<usize>] {
        &self.segments
    }

    pub(crate) fn check_mdp(&self, mdp: &Mdp) -> Result<()> {
        if self.num_states() != mdp.num_states() {
            return Err(shape(format!(
                "aggregation covers {} states, MDP has {}",
                self.num_states(),
                mdp.num_states()
            )));
        }
        Ok(())
    }

    /// Recover `θ` from a policy that is constant on segments.
    pub fn restrict_policy(&self, pi: &TabularPolicy, tol: f64) -> Result<AggregatedPolicyParams> {
        if pi.num_states() != self.num_states() {
            return Err(shape(format!("policy has {} states, aggregation {}", pi.num_states(), self.num_states())));
        }
        let k = pi.num_actions();
        for seg in &self.segments {
            let head = seg[0];
            for &s in &seg[1..] {
                if (0..k).any(|a| (pi.prob(s, a) - pi.prob(head, a)).abs() > tol) {
                    return Err(precondition(format!(
                        "policy is not state-aggregated: states {head} and {s} share segment {} but differ",
                        self.phi[head]
                    )));
                }
            }
        }
        let theta = DMatrix::from_fn(self.num_segments(), k, |i, a| pi.prob(self.segments[i][0], a));
        Ok(AggregatedPolicyParams { theta })
    }

    pub fn contains_policy(&self, pi: &TabularPolicy, tol: f64) -> bool {
        self.restrict_policy(pi, tol).is_ok()
    }

    /// `Σ_{s∈φ⁻¹(i)} x(s,a)` for every segment `i`.
    pub fn sum_over_segments(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.num_segments(), x.ncols());
        for (s, &i) in self.phi.iter().enumerate() {
            for a in 0..x.ncols() {
                out[(i, a)] += x[(s, a)];
            }
        }
        out
    }

    /// Segment masses of a state vector.
    pub fn segment_mass(&self, w: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.num_segments());
        for (s, &i) in self.phi.iter().enumerate() {
            out[i] += w[s];
        }
        out
    }
}

/// Segment-level state-action values `Q̂(i,a)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregatedQ {
    values: DMatrix<f64>,
}

impl AggregatedQ {
    pub fn new(values: DMatrix<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(invalid("aggregated Q has non-finite entries"));
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn get(&self, i: usize, a: usize) -> f64 {
        self.values[(i, a)]
    }

    /// The element of `Q_φ` this represents.
    pub fn lift(&self, agg: &Aggregation) -> QTable {
        QTable::new(DMatrix::from_fn(agg.num_states(), self.values.ncols(), |s, a| {
            self.values[(agg.segment_of(s), a)]
        }))
    }
}

/// Parameters `θ(i,a)` of a state-aggregated policy; rows lie in the simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregatedPolicyParams {
    theta: DMatrix<f64>,
}

impl AggregatedPolicyParams {
    pub fn new(theta: DMatrix<f64>) -> Result<Self> {
        TabularPolicy::new(theta.clone())?;
        Ok(Self { theta })
    }

    pub(crate) fn from_matrix_unchecked(theta: DMatrix<f64>) -> Self {
        Self { theta }
    }

    pub fn uniform(num_segments: usize, num_actions: usize) -> Self {
        Self { theta: DMatrix::from_element(num_segments, num_actions, 1.0 / num_actions as f64) }
    }

    pub fn deterministic(actions: &[usize], num_actions: usize) -> Result<Self> {
        let pi = TabularPolicy::deterministic(actions, num_actions)?;
        Ok(Self { theta: pi.probs().clone() })
    }

    pub fn theta(&self) -> &DMatrix<f64> {
        &self.theta
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.theta
    }

    pub fn num_segments(&self) -> usize {
        self.theta.nrows()
    }

    pub fn num_actions(&self) -> usize {
        self.theta.ncols()
    }

    pub fn get(&self, i: usize, a: usize) -> f64 {
        self.theta[(i, a)]
    }

    pub fn actions(&self) -> Option<Vec<usize>> {
        TabularPolicy::from_matrix_unchecked(self.theta.clone()).actions()
    }

    pub fn mix(&self, target: &AggregatedPolicyParams, alpha: f64) -> Self {
        Self { theta: &target.theta * alpha + &self.theta * (1.0 - alpha) }
    }

    pub fn max_abs_diff(&self, other: &AggregatedPolicyParams) -> f64 {
        (&self.theta - &other.theta).amax()
    }
}

/// `π(s,·) = θ(φ(s),·)`.
pub fn lift_policy(agg: &Aggregation, theta: &AggregatedPolicyParams) -> Result<TabularPolicy> {
    if theta.num_segments() != agg.num_segments() {
        return Err(shape(format!(
            "theta has {} rows, aggregation has {} segments",
            theta.num_segments(),
            agg.num_segments()
        )));
    }
    Ok(TabularPolicy::from_matrix_unchecked(DMatrix::from_fn(
        agg.num_states(),
        theta.num_actions(),
        |s, a| theta.theta[(agg.segment_of(s), a)],
    )))
}

/// Result of a weighted least-squares projection onto `Q_φ`.
#[derive(Debug, Clone)]
pub struct FittedQ {
    pub q: AggregatedQ,
    /// Segments whose weight mass vanished and were fitted by an unweighted mean.
    pub zero_mass_segments: Vec<usize>,
}

/// `argmin_{Q̂∈Q_φ} ‖Q̂ - Q‖_{2,w×1}`: per segment, the `w`-weighted mean of `Q`.
pub fn fit_aggregated_q(agg: &Aggregation, q: &QTable, w: &DVector<f64>) -> Result<FittedQ> {
    if q.num_states() != agg.num_states() || w.len() != agg.num_states() {
        return Err(shape(format!(
            "fit needs Q and w over {} states, got {} and {}",
            agg.num_states(),
            q.num_states(),
            w.len()
        )));
    }
    if let Some(s) = w.iter().position(|x| !(x.is_finite() && *x >= 0.0)) {
        return Err(invalid(format!("state weight w[{s}] = {} must be nonnegative", w[s])));
    }
    let k = q.num_actions();
    let mut values = DMatrix::zeros(agg.num_segments(), k);
    let mut zero_mass_segments = Vec::new();
    for (i, seg) in agg.segments().iter().enumerate() {
        let mass: f64 = seg.iter().map(|&s| w[s]).sum();
        let fallback = mass <= ZERO_MASS;
        if fallback {
            zero_mass_segments.push(i);
        }
        for a in 0..k {
            values[(i, a)] = if fallback {
                seg.iter().map(|&s| q.get(s, a)).sum::<f64>() / seg.len() as f64
            } else {
                seg.iter().map(|&s| w[s] * q.get(s, a)).sum::<f64>() / mass
            };
        }
    }
    Ok(FittedQ { q: AggregatedQ::new(values)?, zero_mass_segments })
}

/// Greedy aggregated parameters: per segment the tie-broken argmax of `Q̂(i,·)`.
pub fn greedy_params(qhat: &AggregatedQ, tie: TieBreak, tie_tol: f64) -> AggregatedPolicyParams {
    let v = qhat.values();
    let actions: Vec<usize> = (0..v.nrows())
        .map(|i| {
            let row: Vec<f64> = v.row(i).iter().copied().collect();
            select_action(&row, tie, tie_tol)
        })
        .collect();
    AggregatedPolicyParams::deterministic(&actions, v.ncols()).expect("argmax indices are in range")
}

/// Deterministic policy in `Π_φ` greedy with respect to `Q̂`.
pub fn greedy_from_aggregated_q(
    agg: &Aggregation,
    qhat: &AggregatedQ,
    tie: TieBreak,
    tie_tol: f64,
) -> Result<TabularPolicy> {
    lift_policy(agg, &greedy_params(qhat, tie, tie_tol))
}

/// Row-wise softmax of `Q̂`, lifted to states.
pub fn softmax_from_aggregated_q(agg: &Aggregation, qhat: &AggregatedQ) -> Result<TabularPolicy> {
    let v = qhat.values();
    let mut theta = DMatrix::zeros(v.nrows(), v.ncols());
    for i in 0..v.nrows() {
        let top = v.row(i).max();
        let mut total = 0.0;
        for a in 0..v.ncols() {
            let e = (v[(i, a)] - top).exp();
            theta[(i, a)] = e;
            total += e;
        }
        for a in 0..v.ncols() {
            theta[(i, a)] /= total;
        }
    }
    lift_policy(agg, &AggregatedPolicyParams::from_matrix_unchecked(theta))
}

/// Largest `|Q(s,a) - Q(s',a)|` over pairs of states sharing a segment.
pub fn within_segment_gap(agg: &Aggregation, q: &QTable) -> f64 {
    let mut worst: f64 = 0.0;
    for seg in agg.segments() {
        for a in 0..q.num_actions() {
            let (lo, hi) = seg.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &s| {
                let x = q.get(s, a);
                (lo.min(x), hi.max(x))
            });
            worst = worst.max(hi - lo);
        }
    }
    worst
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpsilonEstimate {
    /// Lower estimate of the inherent aggregation error.
    pub value: f64,
    /// Whether every deterministic aggregated policy was checked.
    pub exhaustive: bool,
    pub deterministic_checked: usize,
    pub sampled_checked: usize,
}

/// Lower estimate of `ε_φ`: the largest within-segment Q-gap seen over
/// deterministic aggregated policies (enumerated in mixed-radix order up to
/// `det_budget`) and `sample_budget` policies with per-segment rows drawn
/// uniformly from the simplex.
pub fn estimate_epsilon_phi<R: Rng + ?Sized>(
    mdp: &Mdp,
    agg: &Aggregation,
    det_budget: usize,
    sample_budget: usize,
    rng: &mut R,
) -> Result<EpsilonEstimate> {
    agg.check_mdp(mdp)?;
    let m = agg.num_segments();
    let k = mdp.num_actions();
    let total = (k as u128).checked_pow(m as u32);
    let det_count = match total {
        Some(t) if t <= det_budget as u128 => t as usize,
        _ => det_budget,
    };
    let exhaustive = total.is_some_and(|t| t <= det_budget as u128);

    let gap_of = |theta: AggregatedPolicyParams| -> Result<f64> {
        let pi = lift_policy(agg, &theta)?;
        let q = q_values(mdp, &evaluate_policy(mdp, &pi)?)?;
        Ok(within_segment_gap(agg, &q))
    };

    let mut best: f64 = 0.0;
    let mut digits = vec![0usize; m];
    for idx in 0..det_count {
        if idx > 0 {
            // increment the mixed-radix counter
            for d in digits.iter_mut() {
                *d += 1;
                if *d < k {
                    break;
                }
                *d = 0;
            }
        }
        best = best.max(gap_of(AggregatedPolicyParams::deterministic(&digits, k)?)?);
    }
    for _ in 0..sample_budget {
        let mut theta = DMatrix::zeros(m, k);
        for i in 0..m {
            let draws: Vec<f64> = (0..k).map(|_| rng.sample::<f64, _>(Exp1)).collect();
            let total: f64 = draws.iter().sum();
            for a in 0..k {
                theta[(i, a)] = draws[a] / total;
            }
        }
        best = best.max(gap_of(AggregatedPolicyParams::from_matrix_unchecked(theta))?);
    }
    Ok(EpsilonEstimate { value: best, exhaustive, deterministic_checked: det_count, sampled_checked: sample_budget })
}

/// `max_i η_{π*}(φ⁻¹(i)) / ρ(φ⁻¹(i))`, the distribution-mismatch bound.
pub fn kappa_rho_bound(mdp: &Mdp, agg: &Aggregation) -> Result<f64> {
    agg.check_mdp(mdp)?;
    let rho_mass = agg.segment_mass(mdp.rho());
    if let Some(i) = rho_mass.iter().position(|&x| x <= 0.0) {
        return Err(precondition(format!("segment {i} has zero mass under rho")));
    }
    let (pi_star, _) = solve_optimal(mdp)?;
    let eta_mass = agg.segment_mass(occupancy(mdp, &pi_star)?.as_vector());
    Ok(eta_mass.iter().zip(rho_mass.iter()).map(|(e, r)| e / r).fold(f64::NEG_INFINITY, f64::max))
}
