//! Random instances and independent oracles shared by the integration tests.
#![allow(dead_code)]

use aggpolicy::counterexamples::{Counterexample, STAY};
use aggpolicy::{AggregatedPolicyParams, Aggregation, Mdp, TabularPolicy};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_distribution<R: Rng>(n: usize, rng: &mut R) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| rng.random::<f64>() + 1e-3).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|x| x / total).collect()
}

/// Dense random MDP with full-support transitions and initial distribution.
pub fn random_mdp<R: Rng>(states: usize, actions: usize, gamma: f64, rng: &mut R) -> Mdp {
    let rewards = DMatrix::from_fn(states, actions, |_, _| rng.random_range(-1.0..1.0));
    let transitions = (0..states)
        .map(|_| (0..actions).map(|_| random_distribution(states, rng)).collect())
        .collect();
    let rho = DVector::from_vec(random_distribution(states, rng));
    Mdp::new(rewards, transitions, gamma, rho).unwrap()
}

/// Random MDP whose transition rows are sparse (a few successors each).
pub fn random_sparse_mdp<R: Rng>(states: usize, actions: usize, gamma: f64, rng: &mut R) -> Mdp {
    let rewards = DMatrix::from_fn(states, actions, |_, _| rng.random_range(-1.0..1.0));
    let transitions = (0..states)
        .map(|_| {
            (0..actions)
                .map(|_| {
                    let mut row = vec![0.0; states];
                    let k = rng.random_range(1..=2.min(states));
                    for p in random_distribution(k, rng) {
                        row[rng.random_range(0..states)] += p;
                    }
                    row
                })
                .collect()
        })
        .collect();
    let rho = DVector::from_vec(random_distribution(states, rng));
    Mdp::new(rewards, transitions, gamma, rho).unwrap()
}

/// Onto map with `m` segments; the first `m` states seed each segment.
pub fn random_aggregation<R: Rng>(states: usize, m: usize, rng: &mut R) -> Aggregation {
    let phi = (0..states).map(|s| if s < m { s } else { rng.random_range(0..m) }).collect();
    Aggregation::new(m, phi).unwrap()
}

pub fn random_policy<R: Rng>(states: usize, actions: usize, rng: &mut R) -> TabularPolicy {
    let rows: Vec<f64> = (0..states).flat_map(|_| random_distribution(actions, rng)).collect();
    TabularPolicy::new(DMatrix::from_row_slice(states, actions, &rows)).unwrap()
}

pub fn random_params<R: Rng>(m: usize, actions: usize, rng: &mut R) -> AggregatedPolicyParams {
    let rows: Vec<f64> = (0..m).flat_map(|_| random_distribution(actions, rng)).collect();
    AggregatedPolicyParams::new(DMatrix::from_row_slice(m, actions, &rows)).unwrap()
}

/// `P_π` as a dense matrix built straight from the transition rows.
pub fn dense_policy_matrix(mdp: &Mdp, pi: &TabularPolicy) -> DMatrix<f64> {
    let n = mdp.num_states();
    DMatrix::from_fn(n, n, |s, j| (0..mdp.num_actions()).map(|a| pi.prob(s, a) * mdp.transition_row(s, a)[j]).sum())
}

pub fn dense_policy_rewards(mdp: &Mdp, pi: &TabularPolicy) -> DVector<f64> {
    DVector::from_fn(mdp.num_states(), |s, _| (0..mdp.num_actions()).map(|a| pi.prob(s, a) * mdp.reward(s, a)).sum())
}

/// `V_π` by repeated application of `T_π` from zero.
pub fn value_by_iteration(mdp: &Mdp, pi: &TabularPolicy, steps: usize) -> DVector<f64> {
    let p = dense_policy_matrix(mdp, pi);
    let r = dense_policy_rewards(mdp, pi);
    let mut v = DVector::zeros(mdp.num_states());
    for _ in 0..steps {
        v = &r + &p * &v * mdp.gamma();
    }
    v
}

/// `(1-γ) Σ_{t<horizon} γ^t ρ P_π^t`.
pub fn occupancy_by_series(mdp: &Mdp, pi: &TabularPolicy, horizon: usize) -> DVector<f64> {
    let pt = dense_policy_matrix(mdp, pi).transpose();
    let mut d = mdp.rho().clone();
    let mut acc = DVector::zeros(mdp.num_states());
    let mut w = 1.0 - mdp.gamma();
    for _ in 0..horizon {
        acc += &d * w;
        d = &pt * d;
        w *= mdp.gamma();
    }
    acc
}

/// `Q(s,a) = r(s,a) + γ P(·|s,a)·V` from the dense transition rows.
pub fn dense_q(mdp: &Mdp, v: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(mdp.num_states(), mdp.num_actions(), |s, a| {
        let next: f64 = mdp.transition_row(s, a).iter().zip(v.iter()).map(|(p, x)| p * x).sum();
        mdp.reward(s, a) + mdp.gamma() * next
    })
}

/// `J` by a fresh dense LU of `I - γP_π`.
pub fn objective_dense(mdp: &Mdp, pi: &TabularPolicy) -> f64 {
    let n = mdp.num_states();
    let a = DMatrix::identity(n, n) - dense_policy_matrix(mdp, pi) * mdp.gamma();
    let v = a.lu().solve(&dense_policy_rewards(mdp, pi)).unwrap();
    (1.0 - mdp.gamma()) * mdp.rho().dot(&v)
}

/// Euclidean projection onto the simplex by enumerating supports: for each
/// nonempty support the KKT point is a shift of `y`; keep feasible ones and
/// return the closest.
pub fn projection_by_active_sets(y: &[f64]) -> Vec<f64> {
    let n = y.len();
    let mut best: Option<(f64, Vec<f64>)> = None;
    for mask in 1u32..(1 << n) {
        let support: Vec<usize> = (0..n).filter(|i| mask >> i & 1 == 1).collect();
        let shift = (support.iter().map(|&i| y[i]).sum::<f64>() - 1.0) / support.len() as f64;
        let mut x = vec![0.0; n];
        let mut feasible = true;
        for &i in &support {
            x[i] = y[i] - shift;
            if x[i] < -1e-15 {
                feasible = false;
            }
        }
        // multipliers of inactive coordinates must be nonnegative
        if !feasible || (0..n).any(|i| mask >> i & 1 == 0 && y[i] - shift > 1e-15) {
            continue;
        }
        let dist: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
        if best.as_ref().is_none_or(|(d, _)| dist < *d) {
            best = Some((dist, x));
        }
    }
    best.expect("some support is optimal").1
}

/// Values of Example 1 under a deterministic aggregated policy by walking
/// down the chain; `actions[b]` is the action of segment `b` (0-indexed).
pub fn example1_values(ex: &Counterexample, actions: &[usize]) -> DVector<f64> {
    let m = ex.spec.m;
    let g = ex.spec.gamma;
    let eps = ex.spec.eps_phi;
    let mut v = DVector::zeros(2 * m);
    for b in 0..m {
        let stay = ex.spec.stay_cost(b + 1);
        let below = if b == 0 { None } else { Some(v[b - 1]) };
        v[b] = match (actions[b], below) {
            (STAY, _) => stay / (1.0 - g),
            (_, Some(below)) => g * below,
            // Move at the bottom of the chain self-loops with reward 0
            (_, None) => 0.0,
        };
        v[b + m] = match (actions[b], below) {
            (STAY, _) => stay + eps + g * v[b],
            (_, Some(below)) => g * below,
            (_, None) => g * v[b],
        };
    }
    v
}
