//! Four-state qubit model for prepare-and-measure BB84.
//!
//! Every state prepared, every Pauli error and every single-qubit
//! measurement in the protocol stays inside the quartet
//! `{|0⟩, |1⟩, |+⟩, |−⟩}`, so tracking which member a qubit is in (global
//! phase dropped) is exact.

use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Basis {
    /// Computational basis `{|0⟩, |1⟩}`.
    Z,
    /// Hadamard basis `{|+⟩, |−⟩}`.
    X,
}

impl Basis {
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        if rng.random_bool(0.5) {
            Basis::X
        } else {
            Basis::Z
        }
    }

    /// One-bit encoding used on the wire: `Z → 0`, `X → 1`.
    pub fn as_bit(self) -> bool {
        self == Basis::X
    }

    pub fn from_bit(bit: bool) -> Self {
        if bit {
            Basis::X
        } else {
            Basis::Z
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum QubitState {
    Z0,
    Z1,
    XPlus,
    XMinus,
}

impl QubitState {
    pub const ALL: [QubitState; 4] = [QubitState::Z0, QubitState::Z1, QubitState::XPlus, QubitState::XMinus];

    /// The basis this state is an eigenstate of.
    pub fn basis(self) -> Basis {
        match self {
            QubitState::Z0 | QubitState::Z1 => Basis::Z,
            QubitState::XPlus | QubitState::XMinus => Basis::X,
        }
    }

    /// The bit value this state encodes in its own basis.
    pub fn value(self) -> bool {
        matches!(self, QubitState::Z1 | QubitState::XMinus)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Pauli {
    I,
    X,
    Y,
    Z,
}

impl Pauli {
    pub const ALL: [Pauli; 4] = [Pauli::I, Pauli::X, Pauli::Y, Pauli::Z];

    /// Whether the operator flips Z-basis values.
    pub fn flips_bit(self) -> bool {
        matches!(self, Pauli::X | Pauli::Y)
    }

    /// Whether the operator flips X-basis values.
    pub fn flips_phase(self) -> bool {
        matches!(self, Pauli::Z | Pauli::Y)
    }
}

pub fn prepare(basis: Basis, bit: bool) -> QubitState {
    match (basis, bit) {
        (Basis::Z, false) => QubitState::Z0,
        (Basis::Z, true) => QubitState::Z1,
        (Basis::X, false) => QubitState::XPlus,
        (Basis::X, true) => QubitState::XMinus,
    }
}

/// Projective measurement. A matching basis returns the encoded value
/// unchanged; a conjugate basis yields a fair coin and collapses the state.
pub fn measure<R: Rng + ?Sized>(state: QubitState, basis: Basis, rng: &mut R) -> (bool, QubitState) {
    if state.basis() == basis {
        (state.value(), state)
    } else {
        let bit = rng.random_bool(0.5);
        (bit, prepare(basis, bit))
    }
}

/// Applies a Pauli operator, dropping the global phase. `Y` acts as the
/// joint bit and phase flip.
pub fn apply_pauli(state: QubitState, pauli: Pauli) -> QubitState {
    let flip = match state.basis() {
        Basis::Z => pauli.flips_bit(),
        Basis::X => pauli.flips_phase(),
    };
    if flip {
        prepare(state.basis(), !state.value())
    } else {
        state
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ChannelError {
    #[error("{name} = {value} is not a probability")]
    NotAProbability { name: &'static str, value: f64 },
    #[error("eps_bp = {eps_bp} exceeds min(eps_b, eps_p)")]
    JointExceedsMarginal { eps_bp: f64 },
    #[error("eps_b + eps_p - eps_bp = {total} exceeds 1")]
    TotalExceedsOne { total: f64 },
}

fn check_probability(name: &'static str, value: f64) -> Result<(), ChannelError> {
    if value.is_finite() && (0.0..=1.0).contains(&value) {
        Ok(())
    } else {
        Err(ChannelError::NotAProbability { name, value })
    }
}

/// Pauli channel given by its marginal error rates.
///
/// `eps_b` is the probability of a bit flip (`X` or `Y`), `eps_p` of a phase
/// flip (`Z` or `Y`) and `eps_bp` of the joint `Y` error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawChannel", into = "RawChannel")]
pub struct ChannelParams {
    eps_b: f64,
    eps_p: f64,
    eps_bp: f64,
}

#[derive(Serialize, Deserialize)]
struct RawChannel {
    eps_b: f64,
    eps_p: f64,
    eps_bp: f64,
}

impl TryFrom<RawChannel> for ChannelParams {
    type Error = ChannelError;
    fn try_from(raw: RawChannel) -> Result<Self, Self::Error> {
        ChannelParams::new(raw.eps_b, raw.eps_p, raw.eps_bp)
    }
}

impl From<ChannelParams> for RawChannel {
    fn from(p: ChannelParams) -> Self {
        RawChannel {
            eps_b: p.eps_b,
            eps_p: p.eps_p,
            eps_bp: p.eps_bp,
        }
    }
}

/// Probabilities of each Pauli operator under a channel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PauliDistribution {
    pub i: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl ChannelParams {
    pub fn new(eps_b: f64, eps_p: f64, eps_bp: f64) -> Result<Self, ChannelError> {
        check_probability("eps_b", eps_b)?;
        check_probability("eps_p", eps_p)?;
        check_probability("eps_bp", eps_bp)?;
        if eps_bp > eps_b.min(eps_p) {
            return Err(ChannelError::JointExceedsMarginal { eps_bp });
        }
        let total = eps_b + eps_p - eps_bp;
        if total > 1.0 + 1e-12 {
            return Err(ChannelError::TotalExceedsOne { total });
        }
        Ok(Self { eps_b, eps_p, eps_bp })
    }

    pub const fn noiseless() -> Self {
        Self {
            eps_b: 0.0,
            eps_p: 0.0,
            eps_bp: 0.0,
        }
    }

    pub fn eps_b(&self) -> f64 {
        self.eps_b
    }

    pub fn eps_p(&self) -> f64 {
        self.eps_p
    }

    pub fn eps_bp(&self) -> f64 {
        self.eps_bp
    }

    pub fn distribution(&self) -> PauliDistribution {
        let x = self.eps_b - self.eps_bp;
        let z = self.eps_p - self.eps_bp;
        let y = self.eps_bp;
        PauliDistribution {
            i: (1.0 - x - y - z).max(0.0),
            x,
            y,
            z,
        }
    }

    /// Draws one Pauli error. A noiseless channel consumes no randomness.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Pauli {
        if self.eps_b == 0.0 && self.eps_p == 0.0 {
            return Pauli::I;
        }
        let d = self.distribution();
        let u: f64 = rng.random();
        if u < d.x {
            Pauli::X
        } else if u < d.x + d.y {
            Pauli::Y
        } else if u < d.x + d.y + d.z {
            Pauli::Z
        } else {
            Pauli::I
        }
    }
}

impl Default for ChannelParams {
    fn default() -> Self {
        Self::noiseless()
    }
}

pub fn channel_transmit<R: Rng + ?Sized>(state: QubitState, params: &ChannelParams, rng: &mut R) -> QubitState {
    apply_pauli(state, params.sample(rng))
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EveStrategy {
    #[default]
    None,
    /// Each qubit is intercepted with probability `p_attack`, measured in a
    /// uniformly random basis and the collapsed state forwarded.
    InterceptResend { p_attack: f64 },
}

impl EveStrategy {
    pub fn intercept_resend(p_attack: f64) -> Result<Self, ChannelError> {
        check_probability("p_attack", p_attack)?;
        Ok(EveStrategy::InterceptResend { p_attack })
    }
}

pub fn eve_act<R: Rng + ?Sized>(state: QubitState, strategy: &EveStrategy, rng: &mut R) -> QubitState {
    match *strategy {
        EveStrategy::None => state,
        EveStrategy::InterceptResend { p_attack } => {
            if p_attack <= 0.0 || !rng.random_bool(p_attack.min(1.0)) {
                return state;
            }
            let basis = Basis::random(rng);
            measure(state, basis, rng).1
        }
    }
}
