//! The two chain-structured counterexamples.
//!
//! Both have `n = 2m` states paired into segments `{s, s+m}` and two actions,
//! `Move` (index 0) and `Stay` (index 1). Documentation uses the 1-indexed
//! state labels `1..=2m`; internally bottom state `s` is index `s-1` and its
//! mirror `s+m` is index `s-1+m`.
//!
//! * Example 1 (fixed-weight API fails): `Move` steps down the chain, `Stay`
//!   self-loops at `s` and drops from `s+m` to `s`. Mirror states earn an
//!   extra `ε_φ` for `Stay`.
//! * Example 2 (on-policy API fails): `Stay` swaps `s <-> s+m`, `Move` drops
//!   from either state to `s-1`. Bottom states earn the extra `ε_φ`.
//!
//! In segment 1 the two actions coincide.

use crate::aggregation::{lift_policy, AggregatedPolicyParams, Aggregation};
use crate::error::{invalid, Result};
use crate::mdp::{Mdp, TabularPolicy};
use crate::tiebreak::TieBreak;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

pub const MOVE: usize = 0;
pub const STAY: usize = 1;

/// How the initial distribution over the `2m` states is built.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RhoSpec {
    /// Mass `top` on bottom state `m`, the rest uniform over the other states.
    PeakAtM { top: f64 },
    /// `ρ(s) ∝ 20s`, `ρ(s+m) ∝ s`.
    Linear20,
    Uniform,
    Explicit(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleSpec {
    pub m: usize,
    pub gamma: f64,
    pub eps_phi: f64,
    pub c: f64,
    pub rho: RhoSpec,
    pub tiebreak: TieBreak,
}

impl ExampleSpec {
    /// Example 1 at the size used for the fixed-weight API figure.
    pub fn fig1() -> Self {
        Self {
            m: 100,
            gamma: 0.99,
            eps_phi: 1.0,
            c: 0.5,
            rho: RhoSpec::PeakAtM { top: 0.6 },
            tiebreak: TieBreak::PreferAction(STAY),
        }
    }

    /// Example 2 at the size used for the on-policy API figure.
    pub fn fig2() -> Self {
        Self {
            m: 200,
            gamma: 0.99,
            eps_phi: 1.0,
            c: 1.0 / 3.0,
            rho: RhoSpec::Linear20,
            tiebreak: TieBreak::SmallestIndex,
        }
    }

    /// Shrinks `c` just below `ε_φ/2` so greedy steps never hit exact ties.
    pub fn with_infinitesimal_c(mut self) -> Self {
        self.c = self.eps_phi / 2.0 * (1.0 - 1e-9);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.m < 3 {
            return Err(invalid(format!("counterexamples need m >= 3, got {}", self.m)));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(invalid(format!("gamma must lie in (0,1), got {}", self.gamma)));
        }
        if !(self.eps_phi > 0.0 && self.eps_phi.is_finite()) {
            return Err(invalid(format!("eps_phi must be positive, got {}", self.eps_phi)));
        }
        if !(self.c > 0.0 && self.c <= self.eps_phi / 2.0) {
            return Err(invalid(format!("c must lie in (0, eps_phi/2], got {}", self.c)));
        }
        Ok(())
    }

    pub fn num_states(&self) -> usize {
        2 * self.m
    }

    /// `r(s, Stay) = -c Σ_{i=2}^{s} γ^{i-2}` for 1-indexed `s`, via the
    /// recursion `r(1) = 0`, `r(s) = γ r(s-1) - c`.
    pub fn stay_cost(&self, s: usize) -> f64 {
        assert!(s >= 1, "stay_cost is 1-indexed");
        (2..=s).fold(0.0, |r, _| self.gamma * r - self.c)
    }

    fn rho_vector(&self) -> Result<DVector<f64>> {
        let n = self.num_states();
        let m = self.m;
        let v = match &self.rho {
            RhoSpec::PeakAtM { top } => {
                if !(*top > 0.0 && *top < 1.0) {
                    return Err(invalid(format!("peak mass must lie in (0,1), got {top}")));
                }
                let rest = (1.0 - top) / (n - 1) as f64;
                DVector::from_fn(n, |i, _| if i == m - 1 { *top } else { rest })
            }
            RhoSpec::Linear20 => {
                let raw = DVector::from_fn(n, |i, _| if i < m { 20.0 * (i + 1) as f64 } else { (i - m + 1) as f64 });
                let total = raw.sum();
                raw / total
            }
            RhoSpec::Uniform => DVector::from_element(n, 1.0 / n as f64),
            RhoSpec::Explicit(v) => DVector::from_vec(v.clone()),
        };
        Ok(v)
    }
}

/// A built counterexample with its canonical starting policy.
#[derive(Debug, Clone)]
pub struct Counterexample {
    pub spec: ExampleSpec,
    pub mdp: Mdp,
    pub aggregation: Aggregation,
    pub initial_params: AggregatedPolicyParams,
    pub initial_policy: TabularPolicy,
}

fn pairing(m: usize) -> Aggregation {
    Aggregation::new(m, (0..2 * m).map(|s| s % m).collect()).expect("pairs partition the states")
}

fn one_hot(n: usize, j: usize) -> Vec<f64> {
    let mut row = vec![0.0; n];
    row[j] = 1.0;
    row
}

fn finish(spec: &ExampleSpec, rewards: DMatrix<f64>, transitions: Vec<Vec<Vec<f64>>>, seg1: usize) -> Result<Counterexample> {
    let mdp = Mdp::new(rewards, transitions, spec.gamma, spec.rho_vector()?)?;
    let aggregation = pairing(spec.m);
    let initial_params = alternating_params(spec.m, seg1)?;
    let initial_policy = lift_policy(&aggregation, &initial_params)?;
    Ok(Counterexample { spec: spec.clone(), mdp, aggregation, initial_params, initial_policy })
}

/// Example 1: fixed-weight API cycles between two poor policies.
pub fn build_example1(spec: &ExampleSpec) -> Result<Counterexample> {
    spec.validate()?;
    let m = spec.m;
    let n = 2 * m;
    let mut rewards = DMatrix::zeros(n, 2);
    let mut transitions = vec![Vec::new(); n];
    for b in 0..m {
        let stay = spec.stay_cost(b + 1);
        let down = b.saturating_sub(1);
        // bottom state: Move -> s-1 (self-loop at state 1), Stay self-loops
        rewards[(b, STAY)] = stay;
        transitions[b] = vec![one_hot(n, down), one_hot(n, b)];
        // mirror state: same transitions as its bottom twin
        rewards[(b + m, STAY)] = stay + spec.eps_phi;
        transitions[b + m] = vec![one_hot(n, down), one_hot(n, b)];
    }
    finish(spec, rewards, transitions, STAY)
}

/// Example 2: on-policy-weighted API cycles between two poor policies.
pub fn build_example2(spec: &ExampleSpec) -> Result<Counterexample> {
    spec.validate()?;
    let m = spec.m;
    let n = 2 * m;
    let mut rewards = DMatrix::zeros(n, 2);
    let mut transitions = vec![Vec::new(); n];
    for b in 0..m {
        let top = b + m;
        let stay_top = spec.stay_cost(b + 1);
        let stay_bottom = stay_top + spec.eps_phi;
        rewards[(top, STAY)] = stay_top;
        rewards[(b, STAY)] = stay_bottom;
        if b == 0 {
            // segment 1 has Stay only; Move duplicates it
            rewards[(top, MOVE)] = stay_top;
            rewards[(b, MOVE)] = stay_bottom;
            transitions[b] = vec![one_hot(n, top), one_hot(n, top)];
            transitions[top] = vec![one_hot(n, b), one_hot(n, b)];
        } else {
            transitions[b] = vec![one_hot(n, b - 1), one_hot(n, top)];
            transitions[top] = vec![one_hot(n, b - 1), one_hot(n, b)];
        }
    }
    // both actions coincide in segment 1, so greedy steps resolve it to the
    // smallest index; start there too
    finish(spec, rewards, transitions, MOVE)
}

/// Parity-alternating aggregated policy: `Stay` on even segments, `Move` on
/// odd segments `>= 3`, and `segment_one` on segment 1 (1-indexed).
pub fn alternating_params(m: usize, segment_one: usize) -> Result<AggregatedPolicyParams> {
    if m < 2 {
        return Err(invalid(format!("alternating policy needs m >= 2, got {m}")));
    }
    let actions: Vec<usize> = (1..=m)
        .map(|s| match s {
            1 => segment_one,
            s if s % 2 == 0 => STAY,
            _ => MOVE,
        })
        .collect();
    AggregatedPolicyParams::deterministic(&actions, 2)
}

/// Canonical starting policy of the API lower-bound argument; `m` must be odd.
pub fn alternating_initial_policy(m: usize) -> Result<AggregatedPolicyParams> {
    if m < 3 || m % 2 == 0 {
        return Err(invalid(format!("canonical alternating policy needs odd m >= 3, got {m}")));
    }
    alternating_params(m, STAY)
}

/// `γ ε_φ / (4(1-γ))`, the limiting regret floor of fixed-weight API.
pub fn regret_lower_bound(gamma: f64, eps_phi: f64) -> f64 {
    gamma * eps_phi / (4.0 * (1.0 - gamma))
}
