//! Instances, algorithm configurations and the experiment driver.

use aggpolicy::counterexamples::{build_example1, build_example2, regret_lower_bound, Counterexample, ExampleSpec};
use aggpolicy::{
    api_iterate, estimate_epsilon_phi, fw_run, lift_policy, pg_projected_run, smoothness_constant,
    AggregatedPolicyParams, Aggregation, ApiConfig, FwConfig, Mdp, PgConfig, RunTrace, TieBreak,
};
use anyhow::{bail, ensure, Context, Result};
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_distr::Exp1;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use std::fmt;
use std::path::PathBuf;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Fig1,
    Fig2,
}

impl Preset {
    pub fn name(self) -> &'static str {
        match self {
            Preset::Fig1 => "fig1",
            Preset::Fig2 => "fig2",
        }
    }

    pub fn spec(self) -> ExampleSpec {
        match self {
            Preset::Fig1 => ExampleSpec::fig1(),
            Preset::Fig2 => ExampleSpec::fig2(),
        }
    }

    pub fn build(self) -> Result<Counterexample> {
        let built = match self {
            Preset::Fig1 => build_example1(&self.spec()),
            Preset::Fig2 => build_example2(&self.spec()),
        };
        built.with_context(|| format!("building the {} instance", self.name()))
    }

    /// The API variant whose failure the preset exhibits.
    pub fn api_algo(self) -> Algo {
        match self {
            Preset::Fig1 => Algo::Api,
            Preset::Fig2 => Algo::ApiAdaptive,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Algo {
    Api,
    ApiAdaptive,
    SoftApi,
    Pg,
    Fw,
}

impl Algo {
    pub fn name(self) -> &'static str {
        match self {
            Algo::Api => "api",
            Algo::ApiAdaptive => "api-adaptive",
            Algo::SoftApi => "soft-api",
            Algo::Pg => "pg",
            Algo::Fw => "fw",
        }
    }
}

impl fmt::Display for Algo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Starting aggregated policy for file-based runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Init {
    Uniform,
    /// Rows drawn from a seeded uniform distribution on the simplex.
    Random,
}

/// One algorithm run and its parameters.
#[derive(Debug, Clone, Serialize)]
pub struct AlgoRun {
    pub algo: Algo,
    /// Soft-update, Frank-Wolfe or gradient step; `None` picks the default
    /// (`1/L` for gradient ascent, `1` for hard API).
    pub alpha: Option<f64>,
    pub iters: usize,
    pub record_every: usize,
    #[serde(serialize_with = "display")]
    pub tiebreak: TieBreak,
}

fn display<T: fmt::Display, S: serde::Serializer>(v: &T, s: S) -> Result<S::Ok, S::Error> {
    s.collect_str(v)
}

#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Instance {
    Preset { preset: Preset },
    Files { mdp: PathBuf, agg: PathBuf },
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentConfig {
    pub instance: Instance,
    pub init: Init,
    pub algorithms: Vec<AlgoRun>,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub emit_plots: bool,
    pub dump_policies: bool,
    pub eps_det_budget: usize,
    pub eps_samples: usize,
}

impl ExperimentConfig {
    /// The preset run: the preset's API variant and projected policy
    /// gradient with step `1/L`.
    pub fn preset(preset: Preset, api_iters: usize, pg_iters: usize, seed: u64, out_dir: PathBuf) -> Self {
        let tiebreak = preset.spec().tiebreak;
        let algorithms = vec![
            AlgoRun { algo: preset.api_algo(), alpha: None, iters: api_iters, record_every: 1, tiebreak },
            AlgoRun { algo: Algo::Pg, alpha: None, iters: pg_iters, record_every: thinning(pg_iters), tiebreak },
        ];
        Self {
            instance: Instance::Preset { preset },
            init: Init::Uniform,
            algorithms,
            seed,
            out_dir,
            emit_plots: true,
            dump_policies: false,
            eps_det_budget: 64,
            eps_samples: 16,
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(!self.algorithms.is_empty(), "no algorithms requested");
        for run in &self.algorithms {
            ensure!(run.record_every >= 1, "{}: record interval must be at least 1", run.algo);
            if let Some(a) = run.alpha {
                ensure!(a.is_finite() && a > 0.0, "{}: --alpha must be positive, got {a}", run.algo);
                if matches!(run.algo, Algo::SoftApi | Algo::Fw) {
                    ensure!(a <= 1.0, "{}: --alpha must lie in (0, 1], got {a}", run.algo);
                }
            }
        }
        if let Instance::Files { mdp, agg } = &self.instance {
            ensure!(mdp.is_file(), "MDP file {} does not exist", mdp.display());
            ensure!(agg.is_file(), "aggregation file {} does not exist", agg.display());
        }
        Ok(())
    }
}

/// Record interval keeping long gradient runs to about a thousand rows.
pub fn thinning(iters: usize) -> usize {
    (iters / 1000).max(1)
}

/// A loaded instance with its starting policy.
pub struct Loaded {
    pub name: String,
    pub mdp: Mdp,
    pub agg: Aggregation,
    pub theta1: AggregatedPolicyParams,
    pub example: Option<Counterexample>,
}

pub fn load_instance(cfg: &ExperimentConfig) -> Result<Loaded> {
    match &cfg.instance {
        Instance::Preset { preset } => {
            let ex = preset.build()?;
            Ok(Loaded {
                name: preset.name().to_owned(),
                mdp: ex.mdp.clone(),
                agg: ex.aggregation.clone(),
                theta1: ex.initial_params.clone(),
                example: Some(ex),
            })
        }
        Instance::Files { mdp, agg } => {
            let m = Mdp::load(mdp).with_context(|| format!("loading MDP {}", mdp.display()))?;
            let a = Aggregation::load(agg).with_context(|| format!("loading aggregation {}", agg.display()))?;
            ensure!(
                a.num_states() == m.num_states(),
                "aggregation covers {} states but the MDP has {}",
                a.num_states(),
                m.num_states()
            );
            let theta1 = initial_params(cfg.init, a.num_segments(), m.num_actions(), cfg.seed);
            Ok(Loaded { name: "run".to_owned(), mdp: m, agg: a, theta1, example: None })
        }
    }
}

fn initial_params(init: Init, m: usize, k: usize, seed: u64) -> AggregatedPolicyParams {
    match init {
        Init::Uniform => AggregatedPolicyParams::uniform(m, k),
        Init::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let raw = nalgebra::DMatrix::from_fn(m, k, |_, _| rng.sample::<f64, _>(Exp1));
            let mut theta = raw.clone();
            for (i, mut row) in theta.row_iter_mut().enumerate() {
                row /= raw.row(i).sum();
            }
            AggregatedPolicyParams::new(theta).expect("normalized rows lie on the simplex")
        }
    }
}

pub fn run_algorithm(inst: &Loaded, run: &AlgoRun) -> Result<RunTrace> {
    let (mdp, agg) = (&inst.mdp, &inst.agg);
    let pi1 = lift_policy(agg, &inst.theta1)?;
    let trace = match run.algo {
        Algo::Api | Algo::ApiAdaptive => {
            if run.alpha.is_some_and(|a| a != 1.0) {
                bail!("{} uses hard updates; use soft-api for a step size", run.algo);
            }
            let cfg = match run.algo {
                Algo::Api => {
                    let n = mdp.num_states();
                    ApiConfig::fixed(DVector::from_element(n, 1.0 / n as f64), run.tiebreak, run.iters)
                }
                _ => ApiConfig::adaptive(run.tiebreak, run.iters),
            };
            api_iterate(mdp, agg, &pi1, &cfg)?
        }
        Algo::SoftApi => api_iterate(mdp, agg, &pi1, &ApiConfig::soft(run.alpha.unwrap_or(0.1), run.tiebreak, run.iters))?,
        Algo::Fw => fw_run(mdp, agg, &inst.theta1, &FwConfig::new(run.alpha.unwrap_or(0.1), run.tiebreak, run.iters))?,
        Algo::Pg => {
            let mut cfg = PgConfig::for_mdp(mdp, run.iters);
            if let Some(a) = run.alpha {
                cfg.step_alpha = a;
            }
            cfg.record_every = run.record_every;
            pg_projected_run(mdp, agg, &inst.theta1, &cfg)?
        }
    };
    Ok(trace)
}

#[derive(Debug, Clone, Serialize)]
pub struct Provenance {
    pub tool: &'static str,
    pub version: &'static str,
    pub preset: Option<&'static str>,
}

#[derive(Debug, Clone, Serialize)]
pub struct EpsilonSummary {
    pub estimate: f64,
    pub exhaustive: bool,
    pub deterministic_checked: usize,
    pub sampled_checked: usize,
    /// Value fixed by the counterexample construction, when known.
    pub construction: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct TraceSummary {
    pub algo: String,
    pub iterations: usize,
    pub recorded: usize,
    pub terminal_objective: f64,
    pub terminal_opt_gap: f64,
    pub terminal_stationarity_gap: f64,
    pub min_opt_gap: f64,
    pub cycle_start: Option<usize>,
    pub cycle_period: Option<usize>,
    pub ascent_violations: usize,
    pub zero_mass_segment_events: usize,
}

impl TraceSummary {
    fn of(trace: &RunTrace) -> Self {
        let last = trace.last().expect("traces hold at least the initial policy");
        Self {
            algo: trace.algo.clone(),
            iterations: trace.iterations,
            recorded: trace.len(),
            terminal_objective: last.objective,
            terminal_opt_gap: last.opt_gap,
            terminal_stationarity_gap: last.stationarity_gap,
            min_opt_gap: trace.records.iter().map(|r| r.opt_gap).fold(f64::INFINITY, f64::min),
            cycle_start: trace.cycle.map(|c| c.start),
            cycle_period: trace.cycle.map(|c| c.period),
            ascent_violations: trace.ascent_violations,
            zero_mass_segment_events: trace.records.iter().map(|r| r.zero_mass_segments.len()).sum(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub provenance: Provenance,
    pub config: ExperimentConfig,
    pub num_states: usize,
    pub num_segments: usize,
    pub num_actions: usize,
    pub gamma: f64,
    pub optimal_objective: f64,
    pub smoothness_constant: f64,
    pub eps_phi: EpsilonSummary,
    /// `2 ε_φ`, the policy-gradient stationary-point bound.
    pub two_eps_line: f64,
    /// `γ ε_φ / (4(1-γ))`, the API regret floor.
    pub api_lower_bound_line: f64,
    pub traces: Vec<TraceSummary>,
}

pub fn version() -> &'static str {
    env!("AGGPOLICY_VERSION")
}

/// Run every configured algorithm and assemble the summary.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<(Loaded, Vec<RunTrace>, Summary)> {
    cfg.validate()?;
    let inst = load_instance(cfg)?;
    let mut traces = Vec::with_capacity(cfg.algorithms.len());
    for run in &cfg.algorithms {
        log::info!("{}: running {} for {} iterations", inst.name, run.algo, run.iters);
        let trace = run_algorithm(&inst, run).with_context(|| format!("running {}", run.algo))?;
        traces.push(trace);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let est = estimate_epsilon_phi(&inst.mdp, &inst.agg, cfg.eps_det_budget, cfg.eps_samples, &mut rng)?;
    let construction = inst.example.as_ref().map(|ex| ex.spec.eps_phi);
    // the bound lines use the construction value when known, else the estimate
    let eps = construction.unwrap_or(est.value);
    let gamma = inst.mdp.gamma();
    let preset = match &cfg.instance {
        Instance::Preset { preset } => Some(preset.name()),
        Instance::Files { .. } => None,
    };
    let summary = Summary {
        provenance: Provenance { tool: env!("CARGO_PKG_NAME"), version: version(), preset },
        config: cfg.clone(),
        num_states: inst.mdp.num_states(),
        num_segments: inst.agg.num_segments(),
        num_actions: inst.mdp.num_actions(),
        gamma,
        optimal_objective: traces[0].optimal_objective,
        smoothness_constant: smoothness_constant(&inst.mdp),
        eps_phi: EpsilonSummary {
            estimate: est.value,
            exhaustive: est.exhaustive,
            deterministic_checked: est.deterministic_checked,
            sampled_checked: est.sampled_checked,
            construction,
        },
        two_eps_line: 2.0 * eps,
        api_lower_bound_line: regret_lower_bound(gamma, eps),
        traces: traces.iter().map(TraceSummary::of).collect(),
    };
    Ok((inst, traces, summary))
}
