//! Finite discounted MDPs and their exact solution.

use crate::error::{invalid, shape, Error, Result};
use crate::linsolve::{DiscountedSystem, SolveScratch, SparseRows};
use crate::tiebreak::{select_action, TieBreak, DEFAULT_TIE_TOL};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Row-stochasticity tolerance for transitions, ρ and policies.
pub const STOCHASTIC_TOL: f64 = 1e-12;
/// Max-norm Bellman residual accepted from a policy solve.
pub const SOLVE_RESIDUAL_TOL: f64 = 1e-10;
/// Tolerance on the total mass of an occupancy measure.
pub const OCCUPANCY_MASS_TOL: f64 = 1e-10;

const MAX_POLICY_ITERATIONS: usize = 100_000;

/// Finite MDP `(S, A, r, P, γ, ρ)` with states and actions indexed from 0.
#[derive(Debug, Clone)]
pub struct Mdp {
    num_states: usize,
    num_actions: usize,
    rewards: DMatrix<f64>,
    /// `P(s'|s,a)` at `[(s * A + a) * S + s']`.
    transitions: Vec<f64>,
    /// Nonzero entries of each `(s, a)` row.
    support: Vec<Vec<(usize, f64)>>,
    gamma: f64,
    rho: DVector<f64>,
}

/// On-disk layout of an MDP.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MdpFile {
    pub gamma: f64,
    pub rho: Vec<f64>,
    pub rewards: Vec<Vec<f64>>,
    pub transitions: Vec<Vec<Vec<f64>>>,
}

impl Mdp {
    /// Validates and builds an MDP with the default stochasticity tolerance.
    pub fn new(
        rewards: DMatrix<f64>,
        transitions: Vec<Vec<Vec<f64>>>,
        gamma: f64,
        rho: DVector<f64>,
    ) -> Result<Self> {
        Self::with_tolerance(rewards, transitions, gamma, rho, STOCHASTIC_TOL)
    }

    pub fn with_tolerance(
        rewards: DMatrix<f64>,
        transitions: Vec<Vec<Vec<f64>>>,
        gamma: f64,
        rho: DVector<f64>,
        tol: f64,
    ) -> Result<Self> {
        let (n, k) = rewards.shape();
        if n == 0 || k == 0 {
            return Err(shape("MDP needs at least one state and one action"));
        }
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(invalid(format!("gamma must lie in (0,1), got {gamma}")));
        }
        if let Some((s, a)) = (0..n)
            .flat_map(|s| (0..k).map(move |a| (s, a)))
            .find(|&(s, a)| !rewards[(s, a)].is_finite())
        {
            return Err(invalid(format!("reward r({s},{a}) is not finite")));
        }
        if transitions.len() != n {
            return Err(shape(format!("transitions has {} state rows, expected {n}", transitions.len())));
        }
        let mut flat = Vec::with_capacity(n * k * n);
        let mut support = Vec::with_capacity(n * k);
        for (s, per_action) in transitions.iter().enumerate() {
            if per_action.len() != k {
                return Err(shape(format!(
                    "transitions[{s}] has {} actions, expected {k}",
                    per_action.len()
                )));
            }
            for (a, row) in per_action.iter().enumerate() {
                if row.len() != n {
                    return Err(shape(format!("transitions[{s}][{a}] has length {}, expected {n}", row.len())));
                }
                if let Some(j) = row.iter().position(|p| !(p.is_finite() && *p >= 0.0)) {
                    return Err(invalid(format!("P({j}|{s},{a}) = {} is not a probability", row[j])));
                }
                let total: f64 = row.iter().sum();
                if (total - 1.0).abs() > tol {
                    return Err(invalid(format!("transition row ({s},{a}) sums to {total}, not 1")));
                }
                flat.extend_from_slice(row);
                support.push(
                    row.iter()
                        .enumerate()
                        .filter(|(_, p)| **p > 0.0)
                        .map(|(j, p)| (j, *p))
                        .collect(),
                );
            }
        }
        check_distribution(rho.as_slice(), n, tol, "rho")?;
        Ok(Self { num_states: n, num_actions: k, rewards, transitions: flat, support, gamma, rho })
    }

    pub fn from_file(file: MdpFile) -> Result<Self> {
        let n = file.rewards.len();
        let k = file.rewards.first().map_or(0, Vec::len);
        if let Some(s) = file.rewards.iter().position(|r| r.len() != k) {
            return Err(shape(format!("rewards[{s}] has length {}, expected {k}", file.rewards[s].len())));
        }
        let rewards = DMatrix::from_fn(n, k, |s, a| file.rewards[s][a]);
        Self::new(rewards, file.transitions, file.gamma, DVector::from_vec(file.rho))
    }

    pub fn to_file(&self) -> MdpFile {
        let (n, k) = (self.num_states, self.num_actions);
        MdpFile {
            gamma: self.gamma,
            rho: self.rho.iter().copied().collect(),
            rewards: (0..n).map(|s| (0..k).map(|a| self.rewards[(s, a)]).collect()).collect(),
            transitions: (0..n)
                .map(|s| (0..k).map(|a| self.transition_row(s, a).to_vec()).collect())
                .collect(),
        }
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        Self::from_file(serde_json::from_str(text)?)
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string(&self.to_file())?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|source| Error::Io { path: path.display().to_string(), source })?;
        Self::from_json_str(&text)
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn rho(&self) -> &DVector<f64> {
        &self.rho
    }

    pub fn rewards(&self) -> &DMatrix<f64> {
        &self.rewards
    }

    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.rewards[(s, a)]
    }

    /// `‖r‖_∞`.
    pub fn reward_sup(&self) -> f64 {
        self.rewards.amax()
    }

    /// Dense row `P(·|s,a)`.
    pub fn transition_row(&self, s: usize, a: usize) -> &[f64] {
        let start = (s * self.num_actions + a) * self.num_states;
        &self.transitions[start..start + self.num_states]
    }

    /// Nonzero entries `(s', P(s'|s,a))`.
    pub fn successors(&self, s: usize, a: usize) -> &[(usize, f64)] {
        &self.support[s * self.num_actions + a]
    }

    /// Same dynamics with a different initial distribution.
    pub fn with_rho(&self, rho: DVector<f64>) -> Result<Self> {
        check_distribution(rho.as_slice(), self.num_states, STOCHASTIC_TOL, "rho")?;
        Ok(Self { rho, ..self.clone() })
    }

    /// `r_π(s) = Σ_a π(s,a) r(s,a)`.
    pub fn policy_rewards(&self, pi: &TabularPolicy) -> Vec<f64> {
        (0..self.num_states)
            .map(|s| (0..self.num_actions).map(|a| pi.prob(s, a) * self.rewards[(s, a)]).sum())
            .collect()
    }

    /// Sparse `P_π`.
    pub fn policy_transitions(&self, pi: &TabularPolicy) -> SparseRows {
        let mut p = SparseRows::default();
        self.fill_policy_transitions(|s, a| pi.prob(s, a), &mut p);
        p
    }

    fn fill_policy_transitions(&self, prob: impl Fn(usize, usize) -> f64, out: &mut SparseRows) {
        out.clear();
        for s in 0..self.num_states {
            for a in 0..self.num_actions {
                let w = prob(s, a);
                if w > 0.0 {
                    for &(j, p) in self.successors(s, a) {
                        out.push(j, w * p);
                    }
                }
            }
            out.finish_row();
        }
    }

    pub(crate) fn check_policy(&self, pi: &TabularPolicy) -> Result<()> {
        if pi.num_states() != self.num_states || pi.num_actions() != self.num_actions {
            return Err(shape(format!(
                "policy is {}x{}, MDP is {}x{}",
                pi.num_states(),
                pi.num_actions(),
                self.num_states,
                self.num_actions
            )));
        }
        Ok(())
    }

    pub(crate) fn check_values(&self, v: &ValueTable) -> Result<()> {
        if v.len() != self.num_states {
            return Err(shape(format!("value table has {} entries, MDP has {} states", v.len(), self.num_states)));
        }
        if v.as_vector().iter().any(|x| !x.is_finite()) {
            return Err(invalid("value table has non-finite entries"));
        }
        Ok(())
    }
}

fn check_distribution(d: &[f64], n: usize, tol: f64, name: &str) -> Result<()> {
    if d.len() != n {
        return Err(shape(format!("{name} has length {}, expected {n}", d.len())));
    }
    if let Some(i) = d.iter().position(|p| !(p.is_finite() && *p >= 0.0)) {
        return Err(invalid(format!("{name}[{i}] = {} is not a probability", d[i])));
    }
    let total: f64 = d.iter().sum();
    if (total - 1.0).abs() > tol {
        return Err(invalid(format!("{name} sums to {total}, not 1")));
    }
    Ok(())
}

/// Stationary randomized policy `π(s,a)`; each row lies in the simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularPolicy {
    probs: DMatrix<f64>,
}

impl TabularPolicy {
    pub fn new(probs: DMatrix<f64>) -> Result<Self> {
        if probs.nrows() == 0 || probs.ncols() == 0 {
            return Err(shape("policy table is empty"));
        }
        for (s, row) in probs.row_iter().enumerate() {
            check_distribution(row.transpose().as_slice(), probs.ncols(), STOCHASTIC_TOL, &format!("pi[{s}]"))?;
        }
        Ok(Self { probs })
    }

    pub(crate) fn from_matrix_unchecked(probs: DMatrix<f64>) -> Self {
        Self { probs }
    }

    pub fn uniform(num_states: usize, num_actions: usize) -> Self {
        Self { probs: DMatrix::from_element(num_states, num_actions, 1.0 / num_actions as f64) }
    }

    pub fn deterministic(actions: &[usize], num_actions: usize) -> Result<Self> {
        if let Some(s) = actions.iter().position(|&a| a >= num_actions) {
            return Err(shape(format!("action {} at state {s} out of range", actions[s])));
        }
        Ok(Self { probs: DMatrix::from_fn(actions.len(), num_actions, |s, a| f64::from(u8::from(actions[s] == a))) })
    }

    pub fn num_states(&self) -> usize {
        self.probs.nrows()
    }

    pub fn num_actions(&self) -> usize {
        self.probs.ncols()
    }

    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.probs[(s, a)]
    }

    pub fn probs(&self) -> &DMatrix<f64> {
        &self.probs
    }

    /// The chosen action of every state, if the policy is deterministic.
    pub fn actions(&self) -> Option<Vec<usize>> {
        self.probs
            .row_iter()
            .map(|row| row.iter().position(|&p| p == 1.0))
            .collect()
    }

    pub fn is_deterministic(&self) -> bool {
        self.actions().is_some()
    }

    /// `απ̃ + (1-α)π`.
    pub fn mix(&self, target: &TabularPolicy, alpha: f64) -> TabularPolicy {
        Self { probs: &target.probs * alpha + &self.probs * (1.0 - alpha) }
    }

    pub fn max_abs_diff(&self, other: &TabularPolicy) -> f64 {
        (&self.probs - &other.probs).amax()
    }
}

macro_rules! vector_newtype {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq)]
        pub struct $name(DVector<f64>);

        impl $name {
            pub fn new(values: DVector<f64>) -> Self {
                Self(values)
            }

            pub fn as_vector(&self) -> &DVector<f64> {
                &self.0
            }

            pub fn into_vector(self) -> DVector<f64> {
                self.0
            }

            pub fn len(&self) -> usize {
                self.0.len()
            }

            pub fn is_empty(&self) -> bool {
                self.0.is_empty()
            }

            pub fn get(&self, s: usize) -> f64 {
                self.0[s]
            }
        }
    };
}

vector_newtype!(
    /// State values `V(s)`.
    ValueTable
);
vector_newtype!(
    /// Discounted state occupancy `η(s)`; a probability vector.
    OccupancyMeasure
);

/// State-action values `Q(s,a)`.
#[derive(Debug, Clone, PartialEq)]
pub struct QTable(DMatrix<f64>);

impl QTable {
    pub fn new(values: DMatrix<f64>) -> Self {
        Self(values)
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.0[(s, a)]
    }

    pub fn num_states(&self) -> usize {
        self.0.nrows()
    }

    pub fn num_actions(&self) -> usize {
        self.0.ncols()
    }
}

/// `V_π`, `Q_π` and `η_π` from one factorization of `I - γP_π`.
#[derive(Debug, Clone)]
pub struct PolicyEvaluation {
    pub values: ValueTable,
    pub q: QTable,
    pub occupancy: OccupancyMeasure,
}

impl PolicyEvaluation {
    pub fn new(mdp: &Mdp, pi: &TabularPolicy) -> Result<Self> {
        let mut ev = PolicyEvaluator::new(mdp);
        ev.evaluate(mdp, pi)?;
        Ok(ev.to_evaluation())
    }

    /// `J(π) = (1-γ) ρ·V_π`.
    pub fn objective(&self, mdp: &Mdp) -> f64 {
        (1.0 - mdp.gamma()) * mdp.rho().dot(self.values.as_vector())
    }
}

/// Reusable buffers for evaluating many policies on one MDP. After the first
/// call, evaluations allocate only when the sparsity pattern of `P_π`
/// changes, which is what makes long gradient runs cheap.
#[derive(Debug, Clone)]
pub struct PolicyEvaluator {
    num_states: usize,
    num_actions: usize,
    /// `I - γP_π` over the union of all actions' successor patterns.
    system: DiscountedSystem,
    /// `P(j|s,a)` for the `e`-th stored entry `(s, j)`, at `e * A + a`.
    coef: Vec<f64>,
    scratch: SolveScratch,
    probs: Vec<f64>,
    rewards: Vec<f64>,
    start: Vec<f64>,
    values: Vec<f64>,
    occupancy: Vec<f64>,
    /// `Q(s,a)` at `s * A + a`.
    q: Vec<f64>,
}

impl PolicyEvaluator {
    pub fn new(mdp: &Mdp) -> Self {
        let (n, k) = (mdp.num_states(), mdp.num_actions());
        let mut pattern = SparseRows::default();
        pattern.clear();
        for s in 0..n {
            for a in 0..k {
                for &(j, _) in mdp.successors(s, a) {
                    pattern.push(j, 0.0);
                }
            }
            pattern.finish_row();
        }
        let mut coef = vec![0.0; pattern.nnz() * k];
        let mut e = 0;
        for s in 0..n {
            for &(j, _) in pattern.row(s) {
                for a in 0..k {
                    coef[e * k + a] = mdp.successors(s, a).iter().filter(|x| x.0 == j).map(|x| x.1).sum();
                }
                e += 1;
            }
        }
        let scale = 1.0 - mdp.gamma();
        Self {
            num_states: n,
            num_actions: k,
            system: DiscountedSystem::new(pattern, mdp.gamma()),
            coef,
            scratch: SolveScratch::default(),
            probs: vec![0.0; n * k],
            rewards: vec![0.0; n],
            start: mdp.rho().iter().map(|p| scale * p).collect(),
            values: vec![0.0; n],
            occupancy: vec![0.0; n],
            q: vec![0.0; n * k],
        }
    }

    pub fn evaluate(&mut self, mdp: &Mdp, pi: &TabularPolicy) -> Result<()> {
        mdp.check_policy(pi)?;
        self.evaluate_with(mdp, |s, a| pi.prob(s, a))
    }

    /// Evaluate the policy whose probabilities are given by `prob(s, a)`;
    /// the caller guarantees they form valid rows.
    pub(crate) fn evaluate_with(&mut self, mdp: &Mdp, prob: impl Fn(usize, usize) -> f64) -> Result<()> {
        if mdp.num_states() != self.num_states || mdp.num_actions() != self.num_actions {
            return Err(shape("evaluator was built for a different MDP shape"));
        }
        let (n, k, g) = (self.num_states, self.num_actions, mdp.gamma());
        for s in 0..n {
            let mut r = 0.0;
            for a in 0..k {
                let w = prob(s, a);
                self.probs[s * k + a] = w;
                r += w * mdp.reward(s, a);
            }
            self.rewards[s] = r;
        }
        let (row_ptr, entries) = self.system.entries_mut();
        for s in 0..n {
            let w = &self.probs[s * k..(s + 1) * k];
            for e in row_ptr[s]..row_ptr[s + 1] {
                let c = &self.coef[e * k..(e + 1) * k];
                entries[e].1 = w.iter().zip(c).map(|(w, c)| w * c).sum();
            }
        }
        self.system.solve_into(&self.rewards, &mut self.values, &mut self.scratch)?;
        self.system.solve_transpose_into(&self.start, &mut self.occupancy, &mut self.scratch)?;
        let mass: f64 = self.occupancy.iter().sum();
        if (mass - 1.0).abs() > OCCUPANCY_MASS_TOL {
            return Err(Error::Numeric(format!("occupancy mass {mass} deviates from 1")));
        }
        for s in 0..n {
            for a in 0..k {
                let next: f64 = mdp.successors(s, a).iter().map(|&(j, p)| p * self.values[j]).sum();
                self.q[s * k + a] = mdp.reward(s, a) + g * next;
            }
        }
        Ok(())
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn occupancy(&self) -> &[f64] {
        &self.occupancy
    }

    pub fn q(&self, s: usize, a: usize) -> f64 {
        self.q[s * self.num_actions + a]
    }

    /// `J(π) = (1-γ) ρ·V_π`, computed from the stored values.
    pub fn objective(&self, mdp: &Mdp) -> f64 {
        (1.0 - mdp.gamma()) * mdp.rho().iter().zip(&self.values).map(|(p, v)| p * v).sum::<f64>()
    }

    pub fn to_evaluation(&self) -> PolicyEvaluation {
        PolicyEvaluation {
            values: ValueTable(DVector::from_column_slice(&self.values)),
            q: QTable(DMatrix::from_row_slice(self.num_states, self.num_actions, &self.q)),
            occupancy: OccupancyMeasure(DVector::from_column_slice(&self.occupancy)),
        }
    }
}

/// Exact `V_π`, the fixed point of `T_π`, by a direct solve of `(I - γP_π)V = r_π`.
pub fn evaluate_policy(mdp: &Mdp, pi: &TabularPolicy) -> Result<ValueTable> {
    mdp.check_policy(pi)?;
    let system = DiscountedSystem::new(mdp.policy_transitions(pi), mdp.gamma());
    Ok(ValueTable(system.solve(&mdp.policy_rewards(pi))?))
}

/// `Q(s,a) = r(s,a) + γ Σ_{s'} P(s'|s,a) V(s')`.
pub fn q_values(mdp: &Mdp, v: &ValueTable) -> Result<QTable> {
    mdp.check_values(v)?;
    let g = mdp.gamma();
    Ok(QTable(DMatrix::from_fn(mdp.num_states(), mdp.num_actions(), |s, a| {
        let next: f64 = mdp.successors(s, a).iter().map(|&(j, p)| p * v.0[j]).sum();
        mdp.reward(s, a) + g * next
    })))
}

/// `T_π V` when a policy is given, otherwise the optimality operator `TV`.
pub fn bellman_apply(mdp: &Mdp, v: &ValueTable, pi: Option<&TabularPolicy>) -> Result<ValueTable> {
    let q = q_values(mdp, v)?;
    let n = mdp.num_states();
    let out = match pi {
        Some(pi) => {
            mdp.check_policy(pi)?;
            DVector::from_fn(n, |s, _| (0..mdp.num_actions()).map(|a| pi.prob(s, a) * q.0[(s, a)]).sum())
        }
        None => DVector::from_fn(n, |s, _| q.0.row(s).max()),
    };
    Ok(ValueTable(out))
}

/// `η_π = (1-γ) Σ_t γ^t ρ P_π^t`, solved as `η(I - γP_π) = (1-γ)ρ`.
pub fn occupancy(mdp: &Mdp, pi: &TabularPolicy) -> Result<OccupancyMeasure> {
    mdp.check_policy(pi)?;
    let system = DiscountedSystem::new(mdp.policy_transitions(pi), mdp.gamma());
    occupancy_from_system(mdp, &system)
}

fn occupancy_from_system(mdp: &Mdp, system: &DiscountedSystem) -> Result<OccupancyMeasure> {
    let scale = 1.0 - mdp.gamma();
    let rhs: Vec<f64> = mdp.rho().iter().map(|p| scale * p).collect();
    let eta = system.solve_transpose(&rhs)?;
    let mass = eta.sum();
    if (mass - 1.0).abs() > OCCUPANCY_MASS_TOL {
        return Err(Error::Numeric(format!("occupancy mass {mass} deviates from 1")));
    }
    Ok(OccupancyMeasure(eta))
}

/// `J(π) = (1-γ) Σ_s ρ(s) V_π(s)`.
pub fn objective(mdp: &Mdp, pi: &TabularPolicy) -> Result<f64> {
    let v = evaluate_policy(mdp, pi)?;
    Ok((1.0 - mdp.gamma()) * mdp.rho().dot(v.as_vector()))
}

/// Optimal deterministic policy and `V*` by exact policy iteration.
///
/// The returned policy is greedy with respect to `V*`, ties going to the
/// smallest action index.
pub fn solve_optimal(mdp: &Mdp) -> Result<(TabularPolicy, ValueTable)> {
    let n = mdp.num_states();
    let k = mdp.num_actions();
    let mut actions = vec![0usize; n];
    for _ in 0..MAX_POLICY_ITERATIONS {
        let pi = TabularPolicy::deterministic(&actions, k)?;
        let v = evaluate_policy(mdp, &pi)?;
        let q = q_values(mdp, &v)?;
        // keep the incumbent action on ties so the iteration cannot cycle
        let next: Vec<usize> = (0..n)
            .map(|s| {
                let row: Vec<f64> = q.0.row(s).iter().copied().collect();
                select_action(&row, TieBreak::PreferAction(actions[s]), DEFAULT_TIE_TOL)
            })
            .collect();
        if next == actions {
            let greedy: Vec<usize> = (0..n)
                .map(|s| {
                    let row: Vec<f64> = q.0.row(s).iter().copied().collect();
                    select_action(&row, TieBreak::SmallestIndex, DEFAULT_TIE_TOL)
                })
                .collect();
            return Ok((TabularPolicy::deterministic(&greedy, k)?, v));
        }
        actions = next;
    }
    Err(Error::Numeric("policy iteration did not terminate".into()))
}
