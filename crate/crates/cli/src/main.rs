mod checks;
mod experiment;
mod report;

use aggpolicy::{estimate_epsilon_phi, Aggregation, Mdp, TieBreak};
use anyhow::{Context, Result};
use checks::{run_suite, Suite};
use clap::{Args, Parser, Subcommand};
use experiment::{run_experiment, thinning, Algo, AlgoRun, ExperimentConfig, Init, Instance, Preset};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

/// Approximate policy iteration and policy gradient under hard state aggregation.
#[derive(Debug, Parser)]
#[command(name = "aggpolicy", version = env!("AGGPOLICY_VERSION"))]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Output {
    /// Output directory.
    #[arg(long, env = "AGGPOLICY_OUT_DIR", default_value = "out")]
    out: PathBuf,
    /// Skip the SVG plot.
    #[arg(long)]
    no_plot: bool,
    /// Also dump every recorded policy table as JSON.
    #[arg(long)]
    dump_policies: bool,
}

#[derive(Debug, Args)]
struct PresetArgs {
    /// Iterations of the approximate policy iteration run.
    #[arg(long, default_value_t = 100)]
    api_iters: usize,
    /// Iterations of projected policy gradient with step 1/L.
    #[arg(long, default_value_t = 100)]
    pg_iters: usize,
    /// Seed for the aggregation-error estimate.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    output: Output,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fixed-weight API cycling on the first counterexample, against policy gradient.
    Fig1(PresetArgs),
    /// On-policy-weighted API cycling on the second counterexample, against policy gradient.
    Fig2(PresetArgs),
    /// Run one algorithm on an MDP and aggregation loaded from JSON files.
    Run {
        #[arg(long)]
        mdp: PathBuf,
        #[arg(long)]
        agg: PathBuf,
        #[arg(long, value_enum)]
        algo: Algo,
        /// Step size: soft-update weight for soft-api and fw, gradient step for pg (default 1/L).
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long, default_value_t = 100)]
        iters: usize,
        /// smallest, largest, prefer:<action>, prefer-stay or prefer-move.
        #[arg(long, default_value = "smallest")]
        tiebreak: TieBreak,
        #[arg(long, value_enum, default_value_t = Init::Uniform)]
        init: Init,
        /// Seeds the random initial policy and the aggregation-error estimate.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Record every k-th iterate (default keeps about a thousand rows).
        #[arg(long)]
        record_every: Option<usize>,
        #[command(flatten)]
        output: Output,
    },
    /// Run the verification battery; exits non-zero if any check fails.
    Check {
        #[arg(long, value_enum, default_value_t = Suite::All)]
        suite: Suite,
    },
    /// Lower estimate of the aggregation error of a partition.
    Epsilon {
        #[arg(long)]
        mdp: PathBuf,
        #[arg(long)]
        agg: PathBuf,
        /// Deterministic aggregated policies to enumerate.
        #[arg(long, default_value_t = 1024)]
        det_budget: usize,
        /// Randomized aggregated policies to sample.
        #[arg(long, default_value_t = 64)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn main() -> Result<ExitCode> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().command {
        Command::Fig1(args) => preset(Preset::Fig1, args),
        Command::Fig2(args) => preset(Preset::Fig2, args),
        Command::Run { mdp, agg, algo, alpha, iters, tiebreak, init, seed, record_every, output } => {
            let cfg = ExperimentConfig {
                instance: Instance::Files { mdp, agg },
                init,
                algorithms: vec![AlgoRun {
                    algo,
                    alpha,
                    iters,
                    record_every: record_every.unwrap_or_else(|| thinning(iters)),
                    tiebreak,
                }],
                seed,
                out_dir: output.out,
                emit_plots: !output.no_plot,
                dump_policies: output.dump_policies,
                eps_det_budget: 64,
                eps_samples: 16,
            };
            experiment(&cfg, "run")
        }
        Command::Check { suite } => check(suite),
        Command::Epsilon { mdp, agg, det_budget, samples, seed } => epsilon(&mdp, &agg, det_budget, samples, seed),
    }
}

fn preset(preset: Preset, args: PresetArgs) -> Result<ExitCode> {
    let mut cfg = ExperimentConfig::preset(preset, args.api_iters, args.pg_iters, args.seed, args.output.out);
    cfg.emit_plots = !args.output.no_plot;
    cfg.dump_policies = args.output.dump_policies;
    let ex = preset.build()?;
    fs::create_dir_all(&cfg.out_dir).with_context(|| format!("creating {}", cfg.out_dir.display()))?;
    let mdp_path = cfg.out_dir.join(format!("{}_mdp.json", preset.name()));
    fs::write(&mdp_path, ex.mdp.to_json_string()? + "\n").with_context(|| format!("writing {}", mdp_path.display()))?;
    let agg_path = cfg.out_dir.join(format!("{}_agg.json", preset.name()));
    let agg_json = serde_json::to_string(&ex.aggregation.to_file())? + "\n";
    fs::write(&agg_path, agg_json).with_context(|| format!("writing {}", agg_path.display()))?;
    experiment(&cfg, preset.name())
}

fn experiment(cfg: &ExperimentConfig, prefix: &str) -> Result<ExitCode> {
    let (_, traces, summary) = run_experiment(cfg)?;
    let written = report::emit_report(prefix, &traces, &summary, &cfg.out_dir, cfg.emit_plots, cfg.dump_policies)?;
    for t in &summary.traces {
        let cycle = t.cycle_period.map(|p| format!(", cycle period {p}")).unwrap_or_default();
        println!(
            "{:<13} {:>9} iterations  J {:.6}  gap {:.6}  stationarity {:.3e}{cycle}",
            t.algo, t.iterations, t.terminal_objective, t.terminal_opt_gap, t.terminal_stationarity_gap
        );
    }
    println!(
        "eps_phi estimate {:.6}; 2 eps line {:.4}; API lower-bound line {:.4}",
        summary.eps_phi.estimate, summary.two_eps_line, summary.api_lower_bound_line
    );
    for path in written {
        println!("wrote {}", path.display());
    }
    Ok(ExitCode::SUCCESS)
}

fn check(suite: Suite) -> Result<ExitCode> {
    let results = run_suite(suite)?;
    let failed = results.iter().filter(|r| !r.pass).count();
    for r in &results {
        println!("{} [{}] {}: {}", if r.pass { "PASS" } else { "FAIL" }, r.suite, r.check, r.detail);
    }
    println!("{} checks, {failed} failed", results.len());
    Ok(if failed == 0 { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn epsilon(mdp: &Path, agg: &Path, det_budget: usize, samples: usize, seed: u64) -> Result<ExitCode> {
    let m = Mdp::load(mdp).with_context(|| format!("loading MDP {}", mdp.display()))?;
    let a = Aggregation::load(agg).with_context(|| format!("loading aggregation {}", agg.display()))?;
    let est = estimate_epsilon_phi(&m, &a, det_budget, samples, &mut ChaCha8Rng::seed_from_u64(seed))?;
    let report = serde_json::json!({
        "estimate": est.value,
        "exhaustive": est.exhaustive,
        "deterministic_checked": est.deterministic_checked,
        "sampled_checked": est.sampled_checked,
        "seed": seed,
    });
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(ExitCode::SUCCESS)
}
