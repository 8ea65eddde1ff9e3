//! Tabular MDPs under hard state aggregation.
//!
//! Exact policy evaluation, approximate policy iteration (fixed weights,
//! on-policy weights, soft updates), projected and Frank-Wolfe policy
//! gradient, a Monte-Carlo gradient estimator, and the two counterexample
//! families on which API cycles while policy gradient converges.

pub mod adp;
pub mod aggregation;
pub mod counterexamples;
pub mod error;
pub mod gradient;
pub mod linsolve;
pub mod mdp;
pub mod pg;
pub mod simplex;
pub mod stochastic;
pub mod tiebreak;
pub mod trace;

pub use error::{Error, Result};
pub use mdp::{
    bellman_apply, evaluate_policy, objective, occupancy, q_values, solve_optimal, Mdp, MdpFile,
    OccupancyMeasure, PolicyEvaluation, PolicyEvaluator, QTable, TabularPolicy, ValueTable,
};
pub use tiebreak::{select_action, TieBreak, DEFAULT_TIE_TOL};
pub use aggregation::{
    estimate_epsilon_phi, fit_aggregated_q, greedy_from_aggregated_q, greedy_params, kappa_rho_bound, lift_policy,
    softmax_from_aggregated_q, within_segment_gap, AggregatedPolicyParams, AggregatedQ, Aggregation,
    AggregationFile, EpsilonEstimate, FittedQ,
};
pub use adp::{api_iterate, ApiConfig, WeightMode};
pub use gradient::{
    check_stationary_bellman, compatible_approx_check, directional_derivative, exact_gradient, linear_maximizer,
    smoothness_constant, stationarity_gap, BellmanCertificate, GradientTable,
};
pub use pg::{fw_run, fw_step, pg_projected_run, projected_step, FwConfig, FwStep, PgConfig};
pub use simplex::project_simplex;
pub use stochastic::{estimate_gradient, stochastic_gradient, GradientEstimate, MdpSampler, Simulator};
pub use trace::{detect_cycle, parse_csv, policy_hash, Cycle, IterRecord, RunTrace};
