//! Monte-Carlo policy gradient from simulated rollouts with geometric
//! horizons. The estimator only sees a simulator, never transition tables.

use crate::aggregation::{AggregatedPolicyParams, Aggregation};
use crate::error::{shape, Result};
use crate::mdp::Mdp;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Geometric};
use rayon::prelude::*;

/// Generative access to an MDP.
pub trait Simulator {
    fn num_states(&self) -> usize;
    fn num_actions(&self) -> usize;
    fn gamma(&self) -> f64;
    fn sample_initial<R: Rng + ?Sized>(&self, rng: &mut R) -> usize;
    /// Reward and next state after taking `a` in `s`.
    fn step<R: Rng + ?Sized>(&self, s: usize, a: usize, rng: &mut R) -> (f64, usize);
}

/// Simulator backed by a tabular MDP.
#[derive(Debug, Clone, Copy)]
pub struct MdpSampler<'a> {
    mdp: &'a Mdp,
}

impl<'a> MdpSampler<'a> {
    pub fn new(mdp: &'a Mdp) -> Self {
        Self { mdp }
    }
}

fn sample_discrete<R: Rng + ?Sized>(entries: impl Iterator<Item = (usize, f64)>, rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (j, p) in entries {
        acc += p;
        last = j;
        if u < acc {
            return j;
        }
    }
    // rounding left a sliver of mass uncovered
    last
}

impl Simulator for MdpSampler<'_> {
    fn num_states(&self) -> usize {
        self.mdp.num_states()
    }

    fn num_actions(&self) -> usize {
        self.mdp.num_actions()
    }

    fn gamma(&self) -> f64 {
        self.mdp.gamma()
    }

    fn sample_initial<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        sample_discrete(self.mdp.rho().iter().copied().enumerate().filter(|e| e.1 > 0.0), rng)
    }

    fn step<R: Rng + ?Sized>(&self, s: usize, a: usize, rng: &mut R) -> (f64, usize) {
        (self.mdp.reward(s, a), sample_discrete(self.mdp.successors(s, a).iter().copied(), rng))
    }
}

/// One sampled gradient entry: `ĝ(segment, action) = value`, zero elsewhere.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradientSample {
    pub segment: usize,
    pub action: usize,
    pub value: f64,
}

fn horizon<R: Rng + ?Sized>(geom: &Geometric, rng: &mut R) -> u64 {
    geom.sample(rng)
}

fn act<R: Rng + ?Sized>(theta: &AggregatedPolicyParams, segment: usize, rng: &mut R) -> usize {
    sample_discrete((0..theta.num_actions()).map(|a| (a, theta.get(segment, a))).filter(|e| e.1 > 0.0), rng)
}

fn check_inputs<S: Simulator>(sim: &S, agg: &Aggregation, theta: &AggregatedPolicyParams) -> Result<()> {
    if agg.num_states() != sim.num_states() {
        return Err(shape(format!("aggregation covers {} states, simulator {}", agg.num_states(), sim.num_states())));
    }
    if theta.num_segments() != agg.num_segments() || theta.num_actions() != sim.num_actions() {
        return Err(shape("theta does not match the aggregation and action count"));
    }
    AggregatedPolicyParams::new(theta.theta().clone())?;
    Ok(())
}

/// Draw one unbiased sample of `∇_θ J(π_θ)` in sparse form.
///
/// A `Geometric(1-γ)` number of policy steps from `ρ` lands on a state drawn
/// from `η_π`; a uniform action is taken there and a second geometric
/// rollout gives an unbiased `Q̂`. The sample is `|A|·Q̂` at that segment and
/// action.
pub fn sample_gradient_entry<S: Simulator, R: Rng + ?Sized>(
    sim: &S,
    agg: &Aggregation,
    theta: &AggregatedPolicyParams,
    rng: &mut R,
) -> GradientSample {
    let geom = Geometric::new(1.0 - sim.gamma()).expect("discount lies in (0,1)");
    let mut s = sim.sample_initial(rng);
    for _ in 0..horizon(&geom, rng) {
        let a = act(theta, agg.segment_of(s), rng);
        s = sim.step(s, a, rng).1;
    }
    let k = sim.num_actions();
    let segment = agg.segment_of(s);
    let action = rng.random_range(0..k);
    let tau = horizon(&geom, rng);
    let (mut q, mut cur) = sim.step(s, action, rng);
    for _ in 0..tau {
        let a = act(theta, agg.segment_of(cur), rng);
        let (r, next) = sim.step(cur, a, rng);
        q += r;
        cur = next;
    }
    GradientSample { segment, action, value: k as f64 * q }
}

/// Dense `m × |A|` single-sample estimate.
pub fn stochastic_gradient<S: Simulator, R: Rng + ?Sized>(
    sim: &S,
    agg: &Aggregation,
    theta: &AggregatedPolicyParams,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    check_inputs(sim, agg, theta)?;
    let e = sample_gradient_entry(sim, agg, theta, rng);
    let mut g = DMatrix::zeros(agg.num_segments(), sim.num_actions());
    g[(e.segment, e.action)] = e.value;
    Ok(g)
}

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
struct Compensated {
    sum: f64,
    comp: f64,
}

impl Compensated {
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn merge(&mut self, other: &Compensated) {
        self.add(other.sum);
        self.add(other.comp);
    }

    fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientEstimate {
    pub mean: DMatrix<f64>,
    /// Standard error of each component of `mean`.
    pub std_err: DMatrix<f64>,
    pub samples: usize,
}

/// Number of RNG streams a batch is split into; fixed so results do not
/// depend on the thread count.
pub const NUM_STREAMS: u64 = 64;

/// Average `samples` independent draws in parallel. Stream `k` is a ChaCha
/// generator seeded with `seed` on stream `k`, so the result is a pure
/// function of the inputs.
pub fn estimate_gradient<S: Simulator + Sync>(
    sim: &S,
    agg: &Aggregation,
    theta: &AggregatedPolicyParams,
    samples: usize,
    seed: u64,
) -> Result<GradientEstimate> {
    check_inputs(sim, agg, theta)?;
    if samples < 2 {
        return Err(shape("an estimate with standard errors needs at least two samples"));
    }
    let cells = agg.num_segments() * sim.num_actions();
    let streams = NUM_STREAMS.min(samples as u64);
    let partials: Vec<(Vec<Compensated>, Vec<Compensated>)> = (0..streams)
        .into_par_iter()
        .map(|k| {
            let count = samples / streams as usize + usize::from((k as usize) < samples % streams as usize);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(k);
            let mut sum = vec![Compensated::default(); cells];
            let mut sq = vec![Compensated::default(); cells];
            for _ in 0..count {
                let e = sample_gradient_entry(sim, agg, theta, &mut rng);
                let c = e.segment * sim.num_actions() + e.action;
                sum[c].add(e.value);
                sq[c].add(e.value * e.value);
            }
            (sum, sq)
        })
        .collect();
    let mut sum = vec![Compensated::default(); cells];
    let mut sq = vec![Compensated::default(); cells];
    for (ps, pq) in &partials {
        for c in 0..cells {
            sum[c].merge(&ps[c]);
            sq[c].merge(&pq[c]);
        }
    }
    let n = samples as f64;
    let k = sim.num_actions();
    let mean = DMatrix::from_fn(agg.num_segments(), k, |i, a| sum[i * k + a].value() / n);
    let std_err = DMatrix::from_fn(agg.num_segments(), k, |i, a| {
        let m = mean[(i, a)];
        let var = ((sq[i * k + a].value() - n * m * m) / (n - 1.0)).max(0.0);
        (var / n).sqrt()
    });
    Ok(GradientEstimate { mean, std_err, samples })
}
