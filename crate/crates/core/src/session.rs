//! One run of the simplified BB84 protocol, end to end.
//!
//! Alice prepares `(4+δ)n` qubits, three quarters of them in the Z basis.
//! Bob measures each in a fair-coin basis, the bases are announced and the
//! mismatches discarded. Every X-basis survivor becomes a check bit together
//! with as many randomly chosen Z-basis survivors; exactly `n` of the
//! remaining Z-basis bits become code bits. After the check-bit estimate the
//! code bits go through crude correction, subset verification and coset key
//! extraction.

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::analysis::{phase_update, success_lower_bound, SuccessBound};
use crate::gf2::BitVec;
use crate::privacy::{self, KeyLengthRule, PrivacyError};
use crate::qsim::{self, Basis, ChannelParams, EveStrategy, QubitState};
use crate::reconcile::{self, CascadeParams, ReconcileError, RoundStats};
use crate::rng::{SessionRngs, SimRng};
use crate::transcript::{Message, Party, Transcript};
use crate::verify::{self, VerifyOutcome};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolConfig {
    /// Number of code bits.
    pub n: usize,
    /// Oversampling: Alice sends `ceil((4 + delta) · n)` qubits. Check-bit
    /// selection needs `Z − X ≥ n` among sifted bits, whose mean margin is
    /// only `delta · n / 4`.
    pub delta: f64,
    /// Verification rounds per subset.
    pub m: usize,
    /// Subset size.
    pub n_s: usize,
    pub target_residual: f64,
    pub max_rounds: usize,
    pub abort_threshold_bit: f64,
    pub abort_threshold_phase: f64,
    pub eta: f64,
    pub key_len_rule: KeyLengthRule,
    pub channel: ChannelParams,
    pub eve: EveStrategy,
    pub seed: u64,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self {
            n: 2000,
            delta: 1.0,
            m: 30,
            n_s: 100,
            target_residual: 1e-3,
            max_rounds: 16,
            abort_threshold_bit: 0.11,
            abort_threshold_phase: 0.11,
            eta: 0.02,
            key_len_rule: KeyLengthRule::default(),
            channel: ChannelParams::noiseless(),
            eve: EveStrategy::None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("invalid config: {field} {problem}")]
pub struct ConfigError {
    pub field: &'static str,
    pub problem: String,
}

fn bad(field: &'static str, problem: impl Into<String>) -> Result<(), ConfigError> {
    Err(ConfigError {
        field,
        problem: problem.into(),
    })
}

fn open_unit(field: &'static str, v: f64) -> Result<(), ConfigError> {
    if v > 0.0 && v < 1.0 {
        Ok(())
    } else {
        bad(field, format!("must lie in (0, 1), got {v}"))
    }
}

impl ProtocolConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.n == 0 {
            return bad("n", "must be at least 1");
        }
        if !(self.delta.is_finite() && self.delta >= 0.0) {
            return bad("delta", format!("must be a nonnegative number, got {}", self.delta));
        }
        if self.n_s == 0 {
            return bad("n_s", "must be at least 1");
        }
        if self.m == 0 || self.m >= self.n_s {
            return bad("m", format!("must satisfy 0 < m < n_s = {}, got {}", self.n_s, self.m));
        }
        open_unit("target_residual", self.target_residual)?;
        open_unit("abort_threshold_bit", self.abort_threshold_bit)?;
        open_unit("abort_threshold_phase", self.abort_threshold_phase)?;
        open_unit("eta", self.eta)?;
        if self.max_rounds == 0 {
            return bad("max_rounds", "must be at least 1");
        }
        if let EveStrategy::InterceptResend { p_attack } = self.eve {
            if !(0.0..=1.0).contains(&p_attack) {
                return bad("eve", format!("p_attack must lie in [0, 1], got {p_attack}"));
            }
        }
        Ok(())
    }

    pub fn qubit_count(&self) -> usize {
        ((4.0 + self.delta) * self.n as f64).ceil() as usize
    }

    pub fn cascade_params(&self) -> CascadeParams {
        CascadeParams {
            target_residual: self.target_residual,
            max_rounds: self.max_rounds,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Sift,
    Selection,
    Estimate,
    CheckThreshold,
    Reconcile,
    Verify,
    Privacy,
}

#[derive(Debug, Clone, PartialEq, Serialize, thiserror::Error)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AbortReason {
    #[error("only {kept} sifted bits, need {required}")]
    InsufficientSiftedBits { kept: usize, required: usize },
    #[error("{x_basis} X-basis and {z_basis} Z-basis sifted bits cannot give {n} code bits")]
    ImbalancedSift { x_basis: usize, z_basis: usize, n: usize },
    #[error("no check bits in one basis")]
    EmptyCheckSet,
    #[error("check bits disagree too often: bit {eps_b_hat:.4}, phase {eps_p_hat:.4}")]
    CheckFailure { eps_b_hat: f64, eps_p_hat: f64 },
    #[error("crude correction: {message}")]
    Reconcile { message: String },
    #[error("no subset passed verification ({rejected} rejected)")]
    NoSubsetAccepted { rejected: usize },
    #[error("no key capacity at eps_1 = {eps_1:.4}")]
    NoKeyCapacity { eps_1: f64 },
}

impl AbortReason {
    pub fn stage(&self) -> Stage {
        match self {
            AbortReason::InsufficientSiftedBits { .. } => Stage::Sift,
            AbortReason::ImbalancedSift { .. } => Stage::Selection,
            AbortReason::EmptyCheckSet => Stage::Estimate,
            AbortReason::CheckFailure { .. } => Stage::CheckThreshold,
            AbortReason::Reconcile { .. } => Stage::Reconcile,
            AbortReason::NoSubsetAccepted { .. } => Stage::Verify,
            AbortReason::NoKeyCapacity { .. } => Stage::Privacy,
        }
    }

    fn announcer(&self) -> Party {
        match self.stage() {
            Stage::Sift | Stage::Selection => Party::Bob,
            _ => Party::Alice,
        }
    }
}

impl From<ReconcileError> for AbortReason {
    fn from(e: ReconcileError) -> Self {
        AbortReason::Reconcile { message: e.to_string() }
    }
}

/// What one side records per qubit: the basis used and the bit value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QubitRecord {
    pub basis: Basis,
    pub bit: bool,
}

/// Maps a uniform draw from `{1, 2, 3, 4}` to a preparation basis.
pub fn basis_from_w(w: u8) -> Basis {
    match w {
        1 => Basis::X,
        2..=4 => Basis::Z,
        other => panic!("W draw {other} outside {{1, 2, 3, 4}}"),
    }
}

pub fn alice_prepare_batch(count: usize, rngs: &mut SessionRngs) -> (Vec<QubitRecord>, Vec<QubitState>) {
    (0..count)
        .map(|_| {
            let basis = basis_from_w(rngs.alice_bases.random_range(1..=4));
            let bit = rngs.alice_bits.random_bool(0.5);
            (QubitRecord { basis, bit }, qsim::prepare(basis, bit))
        })
        .unzip()
}

pub fn transmit_and_measure(
    states: &[QubitState],
    channel: &ChannelParams,
    eve: &EveStrategy,
    rngs: &mut SessionRngs,
) -> Vec<QubitRecord> {
    states
        .iter()
        .map(|&s| {
            let s = qsim::eve_act(s, eve, &mut rngs.eve);
            let s = qsim::channel_transmit(s, channel, &mut rngs.channel);
            let basis = Basis::random(&mut rngs.bob_bases);
            let (bit, _) = qsim::measure(s, basis, &mut rngs.bob_outcomes);
            QubitRecord { basis, bit }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SiftedData {
    /// Indices into the transmitted batch.
    pub positions: Vec<usize>,
    pub alice_bits: BitVec,
    pub bob_bits: BitVec,
    pub bases: Vec<Basis>,
}

impl SiftedData {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

fn bases_bits(records: &[QubitRecord]) -> BitVec {
    records.iter().map(|r| r.basis.as_bit()).collect()
}

/// Announces both basis strings and keeps the matching positions.
pub fn sift(
    alice: &[QubitRecord],
    bob: &[QubitRecord],
    required: usize,
    transcript: &mut Transcript,
) -> Result<SiftedData, AbortReason> {
    assert_eq!(alice.len(), bob.len(), "one measurement record per qubit");
    transcript.push(
        Party::Alice,
        Message::Bases {
            bases: bases_bits(alice),
        },
    );
    transcript.push(Party::Bob, Message::Bases { bases: bases_bits(bob) });
    let positions: Vec<usize> = (0..alice.len()).filter(|&i| alice[i].basis == bob[i].basis).collect();
    if positions.len() < required {
        return Err(AbortReason::InsufficientSiftedBits {
            kept: positions.len(),
            required,
        });
    }
    Ok(SiftedData {
        alice_bits: positions.iter().map(|&i| alice[i].bit).collect(),
        bob_bits: positions.iter().map(|&i| bob[i].bit).collect(),
        bases: positions.iter().map(|&i| alice[i].basis).collect(),
        positions,
    })
}

/// Partition of the sifted positions (indices into [`SiftedData`]).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Selection {
    pub x_checks: Vec<usize>,
    pub z_checks: Vec<usize>,
    pub discarded: Vec<usize>,
    pub code: Vec<usize>,
}

impl Selection {
    /// All check positions in sifted order.
    pub fn checks(&self) -> Vec<usize> {
        let mut all: Vec<usize> = self.x_checks.iter().chain(&self.z_checks).copied().collect();
        all.sort_unstable();
        all
    }
}

fn sample_subset(pool: &[usize], amount: usize, rng: &mut SimRng) -> (Vec<usize>, Vec<usize>) {
    let mut picked = vec![false; pool.len()];
    for i in index::sample(rng, pool.len(), amount) {
        picked[i] = true;
    }
    let (chosen, rest): (Vec<_>, Vec<_>) = pool.iter().zip(&picked).partition(|(_, &p)| p);
    (
        chosen.into_iter().map(|(&i, _)| i).collect(),
        rest.into_iter().map(|(&i, _)| i).collect(),
    )
}

/// Bob picks as many Z-basis check bits as there are X-basis survivors and
/// discards random Z-basis bits until exactly `n` code bits remain.
pub fn select_check_bits(
    sifted: &SiftedData,
    n: usize,
    rng: &mut SimRng,
    transcript: &mut Transcript,
) -> Result<Selection, AbortReason> {
    let x_checks: Vec<usize> = (0..sifted.len()).filter(|&i| sifted.bases[i] == Basis::X).collect();
    let z_pool: Vec<usize> = (0..sifted.len()).filter(|&i| sifted.bases[i] == Basis::Z).collect();
    if x_checks.is_empty() || z_pool.len() < x_checks.len() + n {
        return Err(AbortReason::ImbalancedSift {
            x_basis: x_checks.len(),
            z_basis: z_pool.len(),
            n,
        });
    }
    let (z_checks, rest) = sample_subset(&z_pool, x_checks.len(), rng);
    let (discarded, code) = sample_subset(&rest, rest.len() - n, rng);

    let mark = |idx: &[usize]| {
        let mut v = BitVec::zeros(sifted.len());
        for &i in idx {
            v.set(i, true);
        }
        v
    };
    transcript.push(
        Party::Bob,
        Message::Selection {
            z_checks: mark(&z_checks),
            discarded: mark(&discarded),
        },
    );
    Ok(Selection {
        x_checks,
        z_checks,
        discarded,
        code,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CheckEstimate {
    pub eps_b_hat: f64,
    pub eps_p_hat: f64,
    pub z_checks: usize,
    pub x_checks: usize,
    pub z_disagreements: usize,
    pub x_disagreements: usize,
}

/// Both sides reveal their check bits; disagreement fractions per basis.
pub fn estimate_errors(
    sifted: &SiftedData,
    selection: &Selection,
    transcript: &mut Transcript,
) -> Result<CheckEstimate, AbortReason> {
    if selection.x_checks.is_empty() || selection.z_checks.is_empty() {
        return Err(AbortReason::EmptyCheckSet);
    }
    let checks = selection.checks();
    transcript.push(
        Party::Alice,
        Message::CheckReveal {
            values: sifted.alice_bits.select(&checks),
        },
    );
    transcript.push(
        Party::Bob,
        Message::CheckReveal {
            values: sifted.bob_bits.select(&checks),
        },
    );
    let disagreements = |idx: &[usize]| {
        idx.iter()
            .filter(|&&i| sifted.alice_bits.get(i) != sifted.bob_bits.get(i))
            .count()
    };
    let z_dis = disagreements(&selection.z_checks);
    let x_dis = disagreements(&selection.x_checks);
    Ok(CheckEstimate {
        eps_b_hat: z_dis as f64 / selection.z_checks.len() as f64,
        eps_p_hat: x_dis as f64 / selection.x_checks.len() as f64,
        z_checks: selection.z_checks.len(),
        x_checks: selection.x_checks.len(),
        z_disagreements: z_dis,
        x_disagreements: x_dis,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub enum Decision {
    Proceed,
    Abort(AbortReason),
}

/// Aborts when either estimate strictly exceeds its threshold.
pub fn abort_decision(estimate: &CheckEstimate, config: &ProtocolConfig) -> Decision {
    if estimate.eps_b_hat > config.abort_threshold_bit || estimate.eps_p_hat > config.abort_threshold_phase {
        Decision::Abort(AbortReason::CheckFailure {
            eps_b_hat: estimate.eps_b_hat,
            eps_p_hat: estimate.eps_p_hat,
        })
    } else {
        Decision::Proceed
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct SessionStats {
    pub qubits_sent: usize,
    pub sifted: usize,
    pub x_checks: usize,
    pub z_checks: usize,
    pub code_bits: usize,
    pub estimate: Option<CheckEstimate>,
    pub rounds: Vec<RoundStats>,
    pub reconciled_bits: usize,
    /// Subsets formed after crude correction (`q`).
    pub subsets: usize,
    /// Subsets that passed verification (`g`).
    pub accepted: usize,
    pub rejected: usize,
    /// Parity bits each side announced during crude correction and verification.
    pub leaked_parity_bits: usize,
    pub eps_p_prime: Option<f64>,
    pub eps_1: Option<f64>,
    pub key_len: usize,
    pub success_bound: Option<SuccessBound>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Outcome {
    Success { key_alice: BitVec, key_bob: BitVec },
    Abort(AbortReason),
}

/// Private per-qubit data never sent over the public channel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroundTruth {
    pub alice: Vec<QubitRecord>,
    pub bob: Vec<QubitRecord>,
}

impl GroundTruth {
    pub fn alice_bits(&self) -> BitVec {
        self.alice.iter().map(|r| r.bit).collect()
    }

    pub fn bob_bits(&self) -> BitVec {
        self.bob.iter().map(|r| r.bit).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionResult {
    pub seed: u64,
    pub outcome: Outcome,
    pub stats: SessionStats,
    pub transcript: Transcript,
    pub ground_truth: GroundTruth,
}

impl SessionResult {
    pub fn is_success(&self) -> bool {
        matches!(self.outcome, Outcome::Success { .. })
    }

    pub fn keys_match(&self) -> Option<bool> {
        match &self.outcome {
            Outcome::Success { key_alice, key_bob } => Some(key_alice == key_bob),
            Outcome::Abort(_) => None,
        }
    }

    pub fn abort_reason(&self) -> Option<&AbortReason> {
        match &self.outcome {
            Outcome::Abort(r) => Some(r),
            Outcome::Success { .. } => None,
        }
    }
}

struct Run<'a> {
    config: &'a ProtocolConfig,
    rngs: SessionRngs,
    transcript: Transcript,
    stats: SessionStats,
}

impl Run<'_> {
    fn execute(&mut self, truth: &mut GroundTruth) -> Result<(BitVec, BitVec), AbortReason> {
        let config = self.config;
        let count = config.qubit_count();
        self.stats.qubits_sent = count;

        let (alice, states) = alice_prepare_batch(count, &mut self.rngs);
        let bob = transmit_and_measure(&states, &config.channel, &config.eve, &mut self.rngs);
        truth.alice = alice;
        truth.bob = bob;

        let sifted = sift(&truth.alice, &truth.bob, 2 * config.n, &mut self.transcript)?;
        self.stats.sifted = sifted.len();

        let selection = select_check_bits(&sifted, config.n, &mut self.rngs.selection, &mut self.transcript)?;
        self.stats.x_checks = selection.x_checks.len();
        self.stats.z_checks = selection.z_checks.len();
        self.stats.code_bits = selection.code.len();

        let estimate = estimate_errors(&sifted, &selection, &mut self.transcript)?;
        self.stats.estimate = Some(estimate);
        if let Decision::Abort(reason) = abort_decision(&estimate, config) {
            return Err(reason);
        }

        let code_a = sifted.alice_bits.select(&selection.code);
        let code_b = sifted.bob_bits.select(&selection.code);
        let cascade = reconcile::crude_cascade(
            &code_a,
            &code_b,
            &config.cascade_params(),
            &mut self.rngs.pairing,
            &mut self.transcript,
        );
        let cascade = match cascade {
            Ok(c) => c,
            Err(failure) => {
                self.stats.leaked_parity_bits = failure.rounds.iter().map(|r| r.leaked_parity_bits).sum();
                self.stats.rounds = failure.rounds;
                return Err(failure.error.into());
            }
        };
        self.stats.leaked_parity_bits = cascade.rounds.iter().map(|r| r.leaked_parity_bits).sum();
        self.stats.rounds = cascade.rounds;
        self.stats.reconciled_bits = cascade.alice.len();

        let subsets = reconcile::partition_subsets(&cascade.alice, &cascade.bob, config.n_s)?;
        self.stats.subsets = subsets.len();
        let mut x_alice = BitVec::zeros(0);
        let mut x_bob = BitVec::zeros(0);
        for (i, (sa, sb)) in subsets.iter().enumerate() {
            let strings = verify::gen_parity_strings(
                config.n_s,
                config.m,
                i,
                &mut self.rngs.parity_strings,
                &mut self.transcript,
            )
            .expect("config validation guarantees 0 < m < n_s");
            let outcome =
                verify::verify_subset(sa, sb, &strings, i, &mut self.transcript).expect("subset lengths match strings");
            match outcome {
                VerifyOutcome::Accept { alice, bob } => {
                    self.stats.accepted += 1;
                    self.stats.leaked_parity_bits += config.m;
                    x_alice.extend_from(&alice);
                    x_bob.extend_from(&bob);
                }
                VerifyOutcome::Reject { round } => {
                    self.stats.rejected += 1;
                    self.stats.leaked_parity_bits += round + 1;
                }
            }
        }
        if self.stats.accepted == 0 {
            return Err(AbortReason::NoSubsetAccepted {
                rejected: self.stats.rejected,
            });
        }

        let eps_p_prime = phase_update(estimate.eps_b_hat, estimate.eps_p_hat, 0.0)
            .map(|u| u.upper_bound)
            .unwrap_or(1.0);
        let eps_1 = eps_p_prime + config.eta;
        self.stats.eps_p_prime = Some(eps_p_prime);
        self.stats.eps_1 = Some(eps_1);
        self.stats.success_bound = success_lower_bound(
            self.stats.accepted,
            config.m as u32,
            config.eta,
            estimate.x_checks,
            estimate.eps_p_hat,
        )
        .ok();

        let k = x_alice.len();
        let spec = match privacy::build_code(
            k,
            eps_1,
            &config.key_len_rule,
            &mut self.rngs.code,
            &mut self.transcript,
        ) {
            Ok(spec) => spec,
            Err(PrivacyError::NoKeyCapacity { .. }) => return Err(AbortReason::NoKeyCapacity { eps_1 }),
            Err(e) => panic!("code construction failed: {e}"),
        };
        self.stats.key_len = spec.key_len();

        let (v, announcement) = privacy::alice_announce(&x_alice, &mut self.rngs.pad, &mut self.transcript);
        let v_bob = privacy::bob_recover(&x_bob, &announcement).expect("equal lengths");
        let key_a = privacy::extract_key(&v, &spec, Party::Alice).expect("pad length is k");
        let key_b = privacy::extract_key(&v_bob, &spec, Party::Bob).expect("pad length is k");
        Ok((key_a.key, key_b.key))
    }
}

/// Runs the full protocol for `config`, seeded by `config.seed`.
pub fn run_session(config: &ProtocolConfig) -> Result<SessionResult, ConfigError> {
    config.validate()?;
    let mut run = Run {
        config,
        rngs: SessionRngs::from_seed(config.seed),
        transcript: Transcript::new(),
        stats: SessionStats::default(),
    };
    let mut truth = GroundTruth {
        alice: Vec::new(),
        bob: Vec::new(),
    };
    let outcome = match run.execute(&mut truth) {
        Ok((key_alice, key_bob)) => Outcome::Success { key_alice, key_bob },
        Err(reason) => {
            run.transcript.push(
                reason.announcer(),
                Message::Abort {
                    reason: format!("{:?}: {reason}", reason.stage()),
                },
            );
            Outcome::Abort(reason)
        }
    };
    Ok(SessionResult {
        seed: config.seed,
        outcome,
        stats: run.stats,
        transcript: run.transcript,
        ground_truth: truth,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;
    use crate::rng::Stream;
    use rand::SeedableRng;

    fn record(basis: Basis, bit: bool) -> QubitRecord {
        QubitRecord { basis, bit }
    }

    fn within_3_sigma(hits: usize, trials: usize, p: f64) -> bool {
        let sigma = (p * (1.0 - p) / trials as f64).sqrt();
        (hits as f64 / trials as f64 - p).abs() <= 3.0 * sigma
    }

    #[test]
    fn w_draw_to_basis() {
        assert_eq!(basis_from_w(1), Basis::X);
        assert_eq!(basis_from_w(2), Basis::Z);
        assert_eq!(basis_from_w(3), Basis::Z);
        assert_eq!(basis_from_w(4), Basis::Z);
    }

    #[test]
    fn quarter_of_preparations_in_x() {
        let mut rngs = SessionRngs::from_seed(1);
        let (records, states) = alice_prepare_batch(100_000, &mut rngs);
        let x = records.iter().filter(|r| r.basis == Basis::X).count();
        assert!(within_3_sigma(x, 100_000, 0.25), "{x}");
        assert!(records
            .iter()
            .zip(&states)
            .all(|(r, &s)| s == qsim::prepare(r.basis, r.bit)));
    }

    #[test]
    fn noiseless_matching_bases_agree() {
        let mut rngs = SessionRngs::from_seed(2);
        let (alice, states) = alice_prepare_batch(20_000, &mut rngs);
        let bob = transmit_and_measure(&states, &ChannelParams::noiseless(), &EveStrategy::None, &mut rngs);
        let mut cross_ones = 0;
        let mut cross = 0;
        for (a, b) in alice.iter().zip(&bob) {
            if a.basis == b.basis {
                assert_eq!(a.bit, b.bit);
            } else if a.basis == Basis::X {
                cross += 1;
                cross_ones += b.bit as usize;
            }
        }
        assert!(within_3_sigma(cross_ones, cross, 0.5));
    }

    #[test]
    fn bit_flip_channel_rate_on_z_bits() {
        let mut rngs = SessionRngs::from_seed(3);
        let channel = ChannelParams::new(0.1, 0.0, 0.0).unwrap();
        let (alice, states) = alice_prepare_batch(100_000, &mut rngs);
        let bob = transmit_and_measure(&states, &channel, &EveStrategy::None, &mut rngs);
        let (mut n, mut flips) = (0, 0);
        for (a, b) in alice.iter().zip(&bob) {
            if a.basis == Basis::Z && b.basis == Basis::Z {
                n += 1;
                flips += (a.bit != b.bit) as usize;
            }
        }
        assert!(within_3_sigma(flips, n, 0.1), "{flips}/{n}");
    }

    #[test]
    fn sift_extremes() {
        let alice = vec![record(Basis::Z, true), record(Basis::X, false), record(Basis::Z, false)];
        let mut t = Transcript::new();
        let s = sift(&alice, &alice, 3, &mut t).unwrap();
        assert_eq!(s.positions, [0, 1, 2]);
        assert_eq!(t.len(), 2);

        let flipped: Vec<QubitRecord> = alice
            .iter()
            .map(|r| record(if r.basis == Basis::Z { Basis::X } else { Basis::Z }, r.bit))
            .collect();
        assert_eq!(
            sift(&alice, &flipped, 1, &mut Transcript::new()),
            Err(AbortReason::InsufficientSiftedBits { kept: 0, required: 1 })
        );
    }

    #[test]
    fn sift_abort_rate_is_small() {
        let config = ProtocolConfig {
            n: 1000,
            delta: 0.2,
            ..ProtocolConfig::default()
        };
        let trials = 1000;
        let mut aborts = 0;
        for seed in 0..trials {
            let mut rngs = SessionRngs::from_seed(seed);
            let (alice, states) = alice_prepare_batch(config.qubit_count(), &mut rngs);
            let bob = transmit_and_measure(&states, &config.channel, &config.eve, &mut rngs);
            aborts += sift(&alice, &bob, 2 * config.n, &mut Transcript::new()).is_err() as usize;
        }
        assert!(aborts < trials as usize / 100, "{aborts}");
    }

    fn sifted_from(bases: &[Basis]) -> SiftedData {
        SiftedData {
            positions: (0..bases.len()).collect(),
            alice_bits: BitVec::zeros(bases.len()),
            bob_bits: BitVec::zeros(bases.len()),
            bases: bases.to_vec(),
        }
    }

    #[test]
    fn selection_counts() {
        let n = 10;
        let k = 4;
        let mut bases = vec![Basis::Z; 2 * n + k];
        for b in bases.iter_mut().take(k) {
            *b = Basis::X;
        }
        let sifted = sifted_from(&bases);
        let mut rng = SimRng::seed_from_u64(0);
        let mut t = Transcript::new();
        let sel = select_check_bits(&sifted, n, &mut rng, &mut t).unwrap();
        assert_eq!(sel.x_checks.len(), k);
        assert_eq!(sel.z_checks.len(), k);
        assert_eq!(sel.code.len(), n);
        assert_eq!(sel.checks().len(), 2 * k);
        assert_eq!(sel.discarded.len(), 2 * n + k - 2 * k - n);
        assert!(sel.code.iter().all(|&i| bases[i] == Basis::Z));
        let mut all: Vec<usize> = sel
            .checks()
            .into_iter()
            .chain(sel.code.clone())
            .chain(sel.discarded.clone())
            .collect();
        all.sort_unstable();
        assert_eq!(all, (0..2 * n + k).collect::<Vec<_>>());
    }

    #[test]
    fn selection_rejects_degenerate_sifts() {
        let mut rng = SimRng::seed_from_u64(0);
        let no_x = sifted_from(&[Basis::Z; 30]);
        assert!(matches!(
            select_check_bits(&no_x, 10, &mut rng, &mut Transcript::new()),
            Err(AbortReason::ImbalancedSift { x_basis: 0, .. })
        ));
        let mut bases = vec![Basis::X; 8];
        bases.extend([Basis::Z; 17]);
        assert!(select_check_bits(&sifted_from(&bases), 10, &mut rng, &mut Transcript::new()).is_err());
        bases.push(Basis::Z);
        assert!(select_check_bits(&sifted_from(&bases), 10, &mut rng, &mut Transcript::new()).is_ok());
    }

    #[test]
    fn code_selection_is_uniform() {
        // 5 X survivors, 25 Z: each Z position lands in the code set with
        // probability 10/25.
        let mut bases = vec![Basis::X; 5];
        bases.extend([Basis::Z; 25]);
        let sifted = sifted_from(&bases);
        let mut rng = substream(9, Stream::Selection);
        let trials = 10_000;
        let mut counts = vec![0usize; bases.len()];
        for _ in 0..trials {
            let sel = select_check_bits(&sifted, 10, &mut rng, &mut Transcript::new()).unwrap();
            for i in sel.code {
                counts[i] += 1;
            }
        }
        let expected = trials as f64 * 10.0 / 25.0;
        let chi2: f64 = counts[5..]
            .iter()
            .map(|&c| (c as f64 - expected).powi(2) / expected)
            .sum();
        // 24 degrees of freedom, 99.9th percentile ≈ 51.2
        assert!(chi2 < 51.2, "chi2 {chi2}");
        assert!(counts[..5].iter().all(|&c| c == 0));
    }

    #[test]
    fn threshold_decisions() {
        let config = ProtocolConfig::default();
        let est = |b, p| CheckEstimate {
            eps_b_hat: b,
            eps_p_hat: p,
            z_checks: 100,
            x_checks: 100,
            z_disagreements: 0,
            x_disagreements: 0,
        };
        assert_eq!(abort_decision(&est(0.0, 0.0), &config), Decision::Proceed);
        assert!(matches!(abort_decision(&est(0.25, 0.25), &config), Decision::Abort(_)));
        assert_eq!(abort_decision(&est(0.11, 0.11), &config), Decision::Proceed);
        assert!(matches!(abort_decision(&est(0.0, 0.1101), &config), Decision::Abort(_)));
    }

    #[test]
    fn estimates_on_noisy_channel() {
        let config = ProtocolConfig {
            n: 20_000,
            channel: ChannelParams::new(0.03, 0.05, 0.0).unwrap(),
            ..ProtocolConfig::default()
        };
        let mut rngs = SessionRngs::from_seed(4);
        let (alice, states) = alice_prepare_batch(config.qubit_count(), &mut rngs);
        let bob = transmit_and_measure(&states, &config.channel, &config.eve, &mut rngs);
        let mut t = Transcript::new();
        let sifted = sift(&alice, &bob, 2 * config.n, &mut t).unwrap();
        let sel = select_check_bits(&sifted, config.n, &mut rngs.selection, &mut t).unwrap();
        let est = estimate_errors(&sifted, &sel, &mut t).unwrap();
        assert!(within_3_sigma(est.z_disagreements, est.z_checks, 0.03));
        assert!(within_3_sigma(est.x_disagreements, est.x_checks, 0.05));
    }

    #[test]
    fn config_validation() {
        assert!(ProtocolConfig::default().validate().is_ok());
        let bad = |c: ProtocolConfig| c.validate().unwrap_err().field;
        assert_eq!(
            bad(ProtocolConfig {
                n: 0,
                ..Default::default()
            }),
            "n"
        );
        assert_eq!(
            bad(ProtocolConfig {
                m: 100,
                ..Default::default()
            }),
            "m"
        );
        assert_eq!(
            bad(ProtocolConfig {
                m: 0,
                ..Default::default()
            }),
            "m"
        );
        assert_eq!(
            bad(ProtocolConfig {
                eta: 0.0,
                ..Default::default()
            }),
            "eta"
        );
        assert_eq!(
            bad(ProtocolConfig {
                abort_threshold_bit: 1.0,
                ..Default::default()
            }),
            "abort_threshold_bit"
        );
        assert_eq!(
            ProtocolConfig {
                n: 1000,
                delta: 0.2,
                ..Default::default()
            }
            .qubit_count(),
            4200
        );
    }

    #[test]
    fn noiseless_session_succeeds() {
        let config = ProtocolConfig {
            n: 1000,
            seed: 5,
            ..ProtocolConfig::default()
        };
        let r = run_session(&config).unwrap();
        let Outcome::Success { key_alice, key_bob } = &r.outcome else {
            panic!("aborted: {:?}", r.outcome);
        };
        assert_eq!(key_alice, key_bob);
        assert_eq!(r.stats.rejected, 0);
        let k = r.stats.accepted * (config.n_s - config.m);
        assert_eq!(key_alice.len(), config.key_len_rule.key_len(k, config.eta));
    }

    #[test]
    fn code_bits_are_z_basis_and_disjoint_from_checks() {
        let config = ProtocolConfig {
            n: 500,
            channel: ChannelParams::new(0.02, 0.02, 0.0).unwrap(),
            ..ProtocolConfig::default()
        };
        let mut rngs = SessionRngs::from_seed(6);
        let (alice, states) = alice_prepare_batch(config.qubit_count(), &mut rngs);
        let bob = transmit_and_measure(&states, &config.channel, &config.eve, &mut rngs);
        let sifted = sift(&alice, &bob, 2 * config.n, &mut Transcript::new()).unwrap();
        let sel = select_check_bits(&sifted, config.n, &mut rngs.selection, &mut Transcript::new()).unwrap();
        let checks: std::collections::HashSet<usize> = sel.checks().into_iter().collect();
        for &c in &sel.code {
            assert!(!checks.contains(&c));
            let pos = sifted.positions[c];
            assert_eq!(alice[pos].basis, Basis::Z);
            assert_eq!(bob[pos].basis, Basis::Z);
        }
    }

    #[test]
    fn full_intercept_resend_always_aborts_at_check() {
        let eve = EveStrategy::intercept_resend(1.0).unwrap();
        for seed in 0..20 {
            let config = ProtocolConfig {
                n: 500,
                eve,
                seed,
                ..ProtocolConfig::default()
            };
            let r = run_session(&config).unwrap();
            assert_eq!(r.abort_reason().map(AbortReason::stage), Some(Stage::CheckThreshold));
            assert_eq!(r.transcript.records().last().unwrap().message.kind(), "abort");
        }
    }

    #[test]
    fn invalid_config_is_an_error_not_an_abort() {
        assert!(run_session(&ProtocolConfig {
            m: 0,
            ..Default::default()
        })
        .is_err());
    }
}
