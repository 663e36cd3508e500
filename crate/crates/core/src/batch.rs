//! Many seeded sessions and their summary report.
//!
//! Trial `i` runs with seed `base_seed + i` (wrapping). Trials run on the
//! rayon pool but results are collected in seed order, so the report does not
//! depend on the thread count.

use std::collections::BTreeMap;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::success_lower_bound;
use crate::session::{run_session, ConfigError, Outcome, ProtocolConfig, SessionResult, Stage};

pub const SCHEMA_VERSION: u32 = 1;

pub fn trial_seed(base_seed: u64, trial: usize) -> u64 {
    base_seed.wrapping_add(trial as u64)
}

/// Runs `trials` sessions of `config` with seeds `base_seed, base_seed + 1, …`.
pub fn run_sessions(config: &ProtocolConfig, trials: usize, base_seed: u64) -> Result<Vec<SessionResult>, ConfigError> {
    config.validate()?;
    (0..trials)
        .into_par_iter()
        .map(|i| {
            run_session(&ProtocolConfig {
                seed: trial_seed(base_seed, i),
                ..config.clone()
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRow {
    pub seed: u64,
    pub success: bool,
    pub abort_stage: Option<Stage>,
    pub abort_reason: Option<String>,
    pub qubits_sent: usize,
    pub key_len: usize,
    pub keys_match: Option<bool>,
    pub eps_b_hat: Option<f64>,
    pub eps_p_hat: Option<f64>,
    pub x_checks: usize,
    pub crude_rounds: usize,
    /// Subsets formed (`q`).
    pub subsets: usize,
    /// Subsets accepted (`g`).
    pub accepted: usize,
    pub rejected: usize,
    pub leaked_parity_bits: usize,
    pub success_bound: Option<f64>,
}

impl TrialRow {
    pub fn from_result(r: &SessionResult) -> Self {
        let s = &r.stats;
        Self {
            seed: r.seed,
            success: r.is_success(),
            abort_stage: r.abort_reason().map(|a| a.stage()),
            abort_reason: r.abort_reason().map(|a| a.to_string()),
            qubits_sent: s.qubits_sent,
            key_len: match &r.outcome {
                Outcome::Success { key_alice, .. } => key_alice.len(),
                Outcome::Abort(_) => 0,
            },
            keys_match: r.keys_match(),
            eps_b_hat: s.estimate.map(|e| e.eps_b_hat),
            eps_p_hat: s.estimate.map(|e| e.eps_p_hat),
            x_checks: s.x_checks,
            crude_rounds: s.rounds.len(),
            subsets: s.subsets,
            accepted: s.accepted,
            rejected: s.rejected,
            leaked_parity_bits: s.leaked_parity_bits,
            success_bound: s.success_bound.map(|b| b.value),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub trials: usize,
    pub successes: usize,
    pub aborts: usize,
    pub aborts_by_stage: BTreeMap<Stage, usize>,
    /// Successful trials whose keys differ.
    pub key_mismatches: usize,
    pub success_rate: f64,
    /// Mean key length over successful trials; 0 if none.
    pub mean_key_len: f64,
    /// Mean of `key_len / qubits_sent` over all trials, aborts counting 0.
    pub mean_key_rate: f64,
    pub mean_accepted: f64,
    pub total_rejected: usize,
}

impl Aggregates {
    pub fn from_rows(rows: &[TrialRow]) -> Self {
        let trials = rows.len();
        let successes = rows.iter().filter(|r| r.success).count();
        let mut aborts_by_stage = BTreeMap::new();
        for stage in rows.iter().filter_map(|r| r.abort_stage) {
            *aborts_by_stage.entry(stage).or_insert(0) += 1;
        }
        let mean = |total: f64, count: usize| if count == 0 { 0.0 } else { total / count as f64 };
        Self {
            trials,
            successes,
            aborts: trials - successes,
            aborts_by_stage,
            key_mismatches: rows.iter().filter(|r| r.keys_match == Some(false)).count(),
            success_rate: mean(successes as f64, trials),
            mean_key_len: mean(rows.iter().map(|r| r.key_len as f64).sum(), successes),
            mean_key_rate: mean(
                rows.iter()
                    .filter(|r| r.qubits_sent > 0)
                    .map(|r| r.key_len as f64 / r.qubits_sent as f64)
                    .sum(),
                trials,
            ),
            mean_accepted: mean(rows.iter().map(|r| r.accepted as f64).sum(), trials),
            total_rejected: rows.iter().map(|r| r.rejected).sum(),
        }
    }
}

/// Empirical success (key produced and keys equal) against the success bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub empirical_success_rate: f64,
    /// Bound at the least favorable realized parameters: largest `g`,
    /// fewest X-basis checks and largest phase estimate over trials that
    /// reached verification. `None` if no trial got that far.
    pub predicted_lower_bound: Option<f64>,
    pub holds: Option<bool>,
}

impl Comparison {
    pub fn from_rows(rows: &[TrialRow], config: &ProtocolConfig) -> Self {
        let good = rows.iter().filter(|r| r.keys_match == Some(true)).count();
        let empirical = if rows.is_empty() {
            0.0
        } else {
            good as f64 / rows.len() as f64
        };
        let reached: Vec<&TrialRow> = rows.iter().filter(|r| r.subsets > 0).collect();
        let predicted = (!reached.is_empty())
            .then(|| {
                let g = reached.iter().map(|r| r.accepted).max().unwrap_or(0);
                let n = reached.iter().map(|r| r.x_checks).min().unwrap_or(0);
                let eps_p = reached.iter().filter_map(|r| r.eps_p_hat).fold(0.0, f64::max);
                success_lower_bound(g, config.m as u32, config.eta, n, eps_p)
                    .ok()
                    .map(|b| b.value)
            })
            .flatten();
        Self {
            empirical_success_rate: empirical,
            predicted_lower_bound: predicted,
            holds: predicted.map(|p| empirical >= p),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub wall_clock_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub config: ProtocolConfig,
    pub trials: usize,
    pub base_seed: u64,
    pub rows: Vec<TrialRow>,
    pub aggregates: Aggregates,
    pub comparison: Comparison,
    /// Excluded from determinism checks.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub timing: Option<Timing>,
}

impl RunReport {
    pub fn from_results(config: &ProtocolConfig, base_seed: u64, results: &[SessionResult]) -> Self {
        let rows: Vec<TrialRow> = results.iter().map(TrialRow::from_result).collect();
        Self {
            schema_version: SCHEMA_VERSION,
            config: ProtocolConfig {
                seed: base_seed,
                ..config.clone()
            },
            trials: rows.len(),
            base_seed,
            aggregates: Aggregates::from_rows(&rows),
            comparison: Comparison::from_rows(&rows, config),
            rows,
            timing: None,
        }
    }

    /// Pretty JSON without the timing block.
    pub fn deterministic_json(&self) -> String {
        let stripped = RunReport {
            timing: None,
            ..self.clone()
        };
        serde_json::to_string_pretty(&stripped).expect("report serializes")
    }
}

pub fn run_batch(config: &ProtocolConfig, trials: usize, base_seed: u64) -> Result<RunReport, ConfigError> {
    let start = Instant::now();
    let results = run_sessions(config, trials, base_seed)?;
    let mut report = RunReport::from_results(config, base_seed, &results);
    report.timing = Some(Timing {
        wall_clock_ms: start.elapsed().as_secs_f64() * 1e3,
    });
    Ok(report)
}
