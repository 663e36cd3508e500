//! Crude bit-flip error correction by random pairing.
//!
//! Each round Alice announces a random permutation of the current bit
//! positions; adjacent elements form pairs. Both sides announce the parity of
//! every pair. Where the parities agree the first bit of the pair survives,
//! otherwise both bits are dropped. An odd leftover bit is dropped as well.
//! For i.i.d. errors at rate `ε` the survivors carry errors at rate
//! `ε² / ((1−ε)² + ε²)`, slightly above `ε²`.
//!
//! After the cascade the survivors are cut into equal subsets for
//! zero-error verification.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::Serialize;

use crate::gf2::BitVec;
use crate::transcript::{Message, Party, Transcript};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ReconcileError {
    #[error("alice has {alice} bits, bob has {bob}")]
    LengthMismatch { alice: usize, bob: usize },
    #[error("pairing plan is not a permutation of 0..{len}")]
    InvalidPlan { len: usize },
    #[error("residual estimate {last_estimate:.3e} still above target after {rounds} rounds")]
    RoundsExhausted { rounds: usize, last_estimate: f64 },
    #[error("only {remaining} bits left before round {round}")]
    PopulationExhausted { round: usize, remaining: usize },
    #[error("{available} bits cannot fill a subset of {subset_len}")]
    TooFewBits { available: usize, subset_len: usize },
}

/// A permutation of the current bit indices; elements `(2i, 2i+1)` are paired.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairingPlan {
    permutation: Vec<usize>,
}

impl PairingPlan {
    pub fn new(permutation: Vec<usize>) -> Result<Self, ReconcileError> {
        let len = permutation.len();
        let mut seen = vec![false; len];
        for &p in &permutation {
            if p >= len || std::mem::replace(&mut seen[p], true) {
                return Err(ReconcileError::InvalidPlan { len });
            }
        }
        Ok(Self { permutation })
    }

    pub fn random<R: Rng + ?Sized>(len: usize, rng: &mut R) -> Self {
        let mut permutation: Vec<usize> = (0..len).collect();
        permutation.shuffle(rng);
        Self { permutation }
    }

    /// Pairs positions in order: `(1,2),(3,4),…` in 0-based form.
    pub fn sequential(len: usize) -> Self {
        Self {
            permutation: (0..len).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.permutation.len()
    }

    pub fn is_empty(&self) -> bool {
        self.permutation.is_empty()
    }

    pub fn permutation(&self) -> &[usize] {
        &self.permutation
    }

    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.permutation.chunks_exact(2).map(|c| (c[0], c[1]))
    }

    pub fn leftover(&self) -> Option<usize> {
        if self.permutation.len() % 2 == 1 {
            self.permutation.last().copied()
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ResidualEstimate {
    /// Error rate of the round's input implied by the disagreement fraction.
    pub input_rate: f64,
    /// Predicted error rate among the round's survivors.
    pub post_round: f64,
    /// The disagreement fraction exceeded 1/2 and was saturated.
    pub anomalous: bool,
}

/// Conditional error rate among survivors of one round at input rate `eps`.
pub fn kept_error_rate(eps: f64) -> f64 {
    let agree_wrong = eps * eps;
    let agree = (1.0 - eps) * (1.0 - eps) + agree_wrong;
    if agree == 0.0 {
        0.0
    } else {
        agree_wrong / agree
    }
}

/// Inverts `f = 2ε(1−ε)` for the input error rate and maps it through
/// [`kept_error_rate`].
pub fn estimate_residual(disagree_fraction: f64) -> ResidualEstimate {
    let anomalous = disagree_fraction > 0.5;
    let f = disagree_fraction.clamp(0.0, 0.5);
    let input_rate = (1.0 - (1.0 - 2.0 * f).max(0.0).sqrt()) / 2.0;
    ResidualEstimate {
        input_rate,
        post_round: kept_error_rate(input_rate),
        anomalous,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundStats {
    pub round: usize,
    pub input_len: usize,
    pub pairs: usize,
    pub disagreements: usize,
    pub kept: usize,
    pub residual: ResidualEstimate,
    /// Parity bits announced by each side this round.
    pub leaked_parity_bits: usize,
}

/// One pairing round. Announces the plan and both parity strings.
pub fn crude_round(
    alice: &BitVec,
    bob: &BitVec,
    plan: &PairingPlan,
    round: usize,
    transcript: &mut Transcript,
) -> Result<(BitVec, BitVec, RoundStats), ReconcileError> {
    if alice.len() != bob.len() {
        return Err(ReconcileError::LengthMismatch {
            alice: alice.len(),
            bob: bob.len(),
        });
    }
    if plan.len() != alice.len() {
        return Err(ReconcileError::InvalidPlan { len: alice.len() });
    }
    if alice.len() < 2 {
        return Err(ReconcileError::PopulationExhausted {
            round,
            remaining: alice.len(),
        });
    }
    transcript.push(
        Party::Alice,
        Message::Pairing {
            round: round as u32,
            permutation: plan.permutation().iter().map(|&p| p as u32).collect(),
        },
    );
    let parities = |bits: &BitVec| -> BitVec { plan.pairs().map(|(j, k)| bits.get(j) ^ bits.get(k)).collect() };
    let alice_par = parities(alice);
    let bob_par = parities(bob);
    let mut kept: Vec<usize> = plan
        .pairs()
        .zip(alice_par.iter().zip(bob_par.iter()))
        .filter(|(_, (a, b))| a == b)
        .map(|((j, _), _)| j)
        .collect();
    kept.sort_unstable();

    let pairs = alice_par.len();
    let disagreements = pairs - kept.len();
    transcript.push(
        Party::Alice,
        Message::PairParities {
            round: round as u32,
            parities: alice_par,
        },
    );
    transcript.push(
        Party::Bob,
        Message::PairParities {
            round: round as u32,
            parities: bob_par,
        },
    );
    let stats = RoundStats {
        round,
        input_len: alice.len(),
        pairs,
        disagreements,
        kept: kept.len(),
        residual: estimate_residual(disagreements as f64 / pairs as f64),
        leaked_parity_bits: pairs,
    };
    Ok((alice.select(&kept), bob.select(&kept), stats))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CascadeParams {
    pub target_residual: f64,
    pub max_rounds: usize,
}

impl Default for CascadeParams {
    fn default() -> Self {
        Self {
            target_residual: 1e-3,
            max_rounds: 16,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CascadeOutcome {
    pub alice: BitVec,
    pub bob: BitVec,
    pub rounds: Vec<RoundStats>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CascadeFailure {
    pub error: ReconcileError,
    pub rounds: Vec<RoundStats>,
}

/// Repeats [`crude_round`] with fresh random pairings until the predicted
/// survivor error rate is at most `target_residual`.
pub fn crude_cascade<R: Rng + ?Sized>(
    alice: &BitVec,
    bob: &BitVec,
    params: &CascadeParams,
    rng: &mut R,
    transcript: &mut Transcript,
) -> Result<CascadeOutcome, CascadeFailure> {
    let fail = |error, rounds| Err(CascadeFailure { error, rounds });
    if alice.len() != bob.len() {
        return fail(
            ReconcileError::LengthMismatch {
                alice: alice.len(),
                bob: bob.len(),
            },
            Vec::new(),
        );
    }
    let mut a = alice.clone();
    let mut b = bob.clone();
    let mut rounds = Vec::new();
    for round in 0..params.max_rounds {
        if a.len() < 2 {
            return fail(
                ReconcileError::PopulationExhausted {
                    round,
                    remaining: a.len(),
                },
                rounds,
            );
        }
        let plan = PairingPlan::random(a.len(), rng);
        let (na, nb, stats) = match crude_round(&a, &b, &plan, round, transcript) {
            Ok(r) => r,
            Err(e) => return fail(e, rounds),
        };
        let done = stats.residual.post_round <= params.target_residual;
        rounds.push(stats);
        a = na;
        b = nb;
        if done {
            return Ok(CascadeOutcome {
                alice: a,
                bob: b,
                rounds,
            });
        }
    }
    let last_estimate = rounds.last().map_or(1.0, |r| r.residual.post_round);
    fail(
        ReconcileError::RoundsExhausted {
            rounds: rounds.len(),
            last_estimate,
        },
        rounds,
    )
}

/// Splits into `floor(len / subset_len)` consecutive subsets; the
/// remainder is discarded.
pub fn partition_subsets(
    alice: &BitVec,
    bob: &BitVec,
    subset_len: usize,
) -> Result<Vec<(BitVec, BitVec)>, ReconcileError> {
    if alice.len() != bob.len() {
        return Err(ReconcileError::LengthMismatch {
            alice: alice.len(),
            bob: bob.len(),
        });
    }
    if subset_len == 0 || alice.len() < subset_len {
        return Err(ReconcileError::TooFewBits {
            available: alice.len(),
            subset_len,
        });
    }
    Ok((0..alice.len() / subset_len)
        .map(|s| {
            let idx: Vec<usize> = (s * subset_len..(s + 1) * subset_len).collect();
            (alice.select(&idx), bob.select(&idx))
        })
        .collect())
}
