//! Per-iteration run records, cycle detection and the CSV trace format.

use crate::aggregation::{AggregatedPolicyParams, AggregatedQ};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;

/// Default max-norm tolerance when comparing policy tables for cycles.
pub const CYCLE_TOL: f64 = 1e-9;

#[derive(Debug, Clone)]
pub struct IterRecord {
    /// Iteration label `t`, starting at 1 for the initial policy.
    pub iter: usize,
    pub policy: AggregatedPolicyParams,
    pub objective: f64,
    /// `J(π*) - J(π_t)`.
    pub opt_gap: f64,
    pub stationarity_gap: f64,
    pub fitted_q: Option<AggregatedQ>,
    pub zero_mass_segments: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Cycle {
    /// Position in `records` where periodic behavior begins.
    pub start: usize,
    pub period: usize,
}

#[derive(Debug, Clone)]
pub struct RunTrace {
    pub algo: String,
    pub optimal_objective: f64,
    pub records: Vec<IterRecord>,
    pub cycle: Option<Cycle>,
    /// Iterations where `J` dropped by more than `1e-12` (informational).
    pub ascent_violations: usize,
    /// Total iterations executed, which can exceed the recorded count when
    /// recording is thinned.
    pub iterations: usize,
}

impl RunTrace {
    pub fn new(algo: impl Into<String>, optimal_objective: f64) -> Self {
        Self {
            algo: algo.into(),
            optimal_objective,
            records: Vec::new(),
            cycle: None,
            ascent_violations: 0,
            iterations: 0,
        }
    }

    pub fn last(&self) -> Option<&IterRecord> {
        self.records.last()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let n = self.records.len();
        for (pos, r) in self.records.iter().enumerate() {
            w.serialize(CsvRow {
                iter: r.iter,
                algo: self.algo.clone(),
                j: r.objective,
                opt_gap: r.opt_gap,
                stationarity_gap: r.stationarity_gap,
                cycle_period: if pos + 1 == n { self.cycle.map(|c| c.period) } else { None },
                policy_hash: policy_hash(&r.policy),
            })?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Numeric(format!("csv flush: {e}")))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()?).map_err(|source| Error::Io { path: path.display().to_string(), source })
    }
}

/// One row of a trace CSV. Floats are written in shortest round-trip form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    pub iter: usize,
    pub algo: String,
    #[serde(rename = "J")]
    pub j: f64,
    pub opt_gap: f64,
    pub stationarity_gap: f64,
    pub cycle_period: Option<usize>,
    pub policy_hash: String,
}

pub fn parse_csv(text: &str) -> Result<Vec<CsvRow>> {
    csv::Reader::from_reader(text.as_bytes())
        .deserialize()
        .map(|row| row.map_err(Error::from))
        .collect()
}

/// First 16 hex digits of SHA-256 over the little-endian policy entries.
pub fn policy_hash(policy: &AggregatedPolicyParams) -> String {
    let mut h = Sha256::new();
    let theta = policy.theta();
    for i in 0..theta.nrows() {
        for a in 0..theta.ncols() {
            h.update(theta[(i, a)].to_le_bytes());
        }
    }
    hex::encode(&h.finalize()[..8])
}

/// Smallest period `p` (then earliest start) such that every recorded policy
/// from `start` on repeats `p` positions later within `tol` in max-norm.
///
/// A period is only reported once a full repetition has been observed, i.e.
/// at least `p` comparisons back it.
pub fn detect_cycle(trace: &RunTrace, tol: f64) -> Option<Cycle> {
    let policies: Vec<&AggregatedPolicyParams> = trace.records.iter().map(|r| &r.policy).collect();
    detect_cycle_in(&policies, tol)
}

pub fn detect_cycle_in(policies: &[&AggregatedPolicyParams], tol: f64) -> Option<Cycle> {
    let n = policies.len();
    for period in 1..=n / 2 {
        // walk back from the end while the period holds
        let mut start = n - period;
        while start > 0 && policies[start - 1].max_abs_diff(policies[start - 1 + period]) <= tol {
            start -= 1;
        }
        if n - period - start >= period {
            return Some(Cycle { start, period });
        }
    }
    None
}

#[derive(Serialize)]
struct PolicyDump<'a> {
    iter: usize,
    theta: Vec<Vec<f64>>,
    zero_mass_segments: &'a [usize],
}

impl RunTrace {
    /// Every recorded policy table as a JSON array of `{iter, theta, zero_mass_segments}`.
    pub fn policies_json(&self) -> Result<String> {
        let dump: Vec<PolicyDump> = self
            .records
            .iter()
            .map(|r| PolicyDump {
                iter: r.iter,
                theta: r.policy.theta().row_iter().map(|row| row.iter().copied().collect()).collect(),
                zero_mass_segments: &r.zero_mass_segments,
            })
            .collect();
        Ok(serde_json::to_string_pretty(&dump)?)
    }
}
