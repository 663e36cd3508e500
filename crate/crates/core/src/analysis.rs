//! Closed-form probabilities for sizing the protocol and checking it.

use serde::Serialize;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AnalysisError {
    #[error("{name} must be {constraint}, got {value}")]
    Precondition {
        name: &'static str,
        constraint: &'static str,
        value: f64,
    },
}

fn require(ok: bool, name: &'static str, constraint: &'static str, value: f64) -> Result<(), AnalysisError> {
    if ok && !value.is_nan() {
        Ok(())
    } else {
        Err(AnalysisError::Precondition {
            name,
            constraint,
            value,
        })
    }
}

fn require_probability(name: &'static str, value: f64) -> Result<(), AnalysisError> {
    require((0.0..=1.0).contains(&value), name, "in [0, 1]", value)
}

/// Phase-error rate among qubits that carried no bit flip.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PhaseUpdate {
    /// `(ε_p − ε_bp) / (1 − ε_b)`.
    pub exact: f64,
    /// `ε_p / (1 − ε_b)`, the worst case `ε_bp = 0`.
    pub upper_bound: f64,
}

pub fn phase_update(eps_b: f64, eps_p: f64, eps_bp: f64) -> Result<PhaseUpdate, AnalysisError> {
    require(eps_b < 1.0, "eps_b", "< 1", eps_b)?;
    require_probability("eps_b", eps_b)?;
    require_probability("eps_p", eps_p)?;
    require_probability("eps_bp", eps_bp)?;
    require(eps_bp <= eps_b.min(eps_p), "eps_bp", "<= min(eps_b, eps_p)", eps_bp)?;
    let keep = 1.0 - eps_b;
    Ok(PhaseUpdate {
        exact: ((eps_p - eps_bp) / keep).min(1.0),
        upper_bound: (eps_p / keep).min(1.0),
    })
}

/// Confidence that the code-bit phase rate stays within `η` of the estimate:
/// `1 − exp(−η² n / (4 (ε_p − ε_p²)))`.
pub fn epsilon1_confidence(eta: f64, n: usize, eps_p: f64) -> Result<f64, AnalysisError> {
    require(eta > 0.0, "eta", "> 0", eta)?;
    require_probability("eps_p", eps_p)?;
    let variance = eps_p - eps_p * eps_p;
    if variance == 0.0 {
        return Ok(1.0);
    }
    Ok(1.0 - (-eta * eta * n as f64 / (4.0 * variance)).exp())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DiscardProbability {
    /// Exactly one error in the subset: `n_s ε (1−ε)^{n_s−1}`.
    pub single_error: f64,
    /// At least one error: `1 − (1−ε)^{n_s}`.
    pub any_error: f64,
}

pub fn subset_discard_prob(n_s: usize, eps_b_c: f64) -> Result<DiscardProbability, AnalysisError> {
    require(n_s >= 1, "n_s", ">= 1", n_s as f64)?;
    require_probability("eps_b_c", eps_b_c)?;
    let n = n_s as f64;
    Ok(DiscardProbability {
        single_error: n * eps_b_c * (1.0 - eps_b_c).powi(n_s as i32 - 1),
        any_error: 1.0 - (1.0 - eps_b_c).powi(n_s as i32),
    })
}

/// `max(0, 1 − g · 2^{−m})`.
pub fn key_correctness_bound(g: usize, m: u32) -> f64 {
    (1.0 - g as f64 * 0.5f64.powi(m as i32)).max(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SuccessBound {
    pub value: f64,
    pub correctness: f64,
    pub confidence: f64,
    /// `g · 2^{−m} ≥ 1`, so the bound says nothing.
    pub vacuous: bool,
}

/// `(1 − 2^{−m} g) · [1 − exp(−η² n / (4 (ε_p − ε_p²)))]`.
pub fn success_lower_bound(g: usize, m: u32, eta: f64, n: usize, eps_p: f64) -> Result<SuccessBound, AnalysisError> {
    require(m >= 1, "m", ">= 1", m as f64)?;
    let confidence = epsilon1_confidence(eta, n, eps_p)?;
    let correctness = key_correctness_bound(g, m);
    Ok(SuccessBound {
        value: correctness * confidence,
        correctness,
        confidence,
        vacuous: correctness == 0.0,
    })
}

/// Every quantity that feeds the success bound for one run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ErrorBudget {
    pub eps_b: f64,
    pub eps_p: f64,
    pub eps_bp: f64,
    /// Residual bit-error rate after crude correction.
    pub eps_b_c: f64,
    pub eps_p_prime: f64,
    pub eta: f64,
    pub eps_1: f64,
    pub n: usize,
    pub g: usize,
    pub m: u32,
    pub n_s: usize,
}

impl ErrorBudget {
    /// Sizes the budget from worst-case phase update plus `η`.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        eps_b: f64,
        eps_p: f64,
        eps_bp: f64,
        eps_b_c: f64,
        eta: f64,
        n: usize,
        g: usize,
        m: u32,
        n_s: usize,
    ) -> Result<Self, AnalysisError> {
        let eps_p_prime = phase_update(eps_b, eps_p, eps_bp)?.upper_bound;
        Ok(Self {
            eps_b,
            eps_p,
            eps_bp,
            eps_b_c,
            eps_p_prime,
            eta,
            eps_1: eps_p_prime + eta,
            n,
            g,
            m,
            n_s,
        })
    }

    pub fn success_bound(&self) -> Result<SuccessBound, AnalysisError> {
        success_lower_bound(self.g, self.m, self.eta, self.n, self.eps_p)
    }
}
