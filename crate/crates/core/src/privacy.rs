//! Key extraction from the verified string.
//!
//! Once verification leaves both sides with the same `k`-bit string `x`, the
//! outer code is the whole space `F_2^k`: no bit-error decoding is needed.
//! Alice draws a uniform pad `v`, announces `x ⊕ v`, and Bob recovers `v`
//! from his copy of `x`. The final key is the label of the coset `v + C_2`,
//! computed as `H2 · v` where `H2` is a parity-check matrix of the random
//! subcode `C_2`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::gf2::{parity_check_of, BitMatrix, BitVec, Gf2Error};
use crate::rng::Stream;
use crate::transcript::{CodeSpecWire, Message, Party, Transcript};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PrivacyError {
    #[error("no key capacity: k = {k}, eps_1 = {eps_1}")]
    NoKeyCapacity { k: usize, eps_1: f64 },
    #[error("code spec: {0}")]
    Code(#[from] Gf2Error),
    #[error("code spec inconsistent: {0}")]
    Inconsistent(String),
}

/// Binary entropy in bits.
pub fn binary_entropy(p: f64) -> f64 {
    if p <= 0.0 || p >= 1.0 {
        return 0.0;
    }
    -p * p.log2() - (1.0 - p) * (1.0 - p).log2()
}

/// How many key bits to extract from `k` verified bits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum KeyLengthRule {
    /// `floor(k · (1 − H₂(ε₁))) − margin`, clamped to `[0, k]`.
    EntropyMargin {
        margin: usize,
    },
    Fixed {
        key_len: usize,
    },
}

impl Default for KeyLengthRule {
    fn default() -> Self {
        KeyLengthRule::EntropyMargin { margin: 10 }
    }
}

impl KeyLengthRule {
    pub fn key_len(&self, k: usize, eps_1: f64) -> usize {
        match *self {
            KeyLengthRule::EntropyMargin { margin } => {
                if !(0.0..0.5).contains(&eps_1) {
                    return 0;
                }
                let raw = (k as f64 * (1.0 - binary_entropy(eps_1))).floor() as usize;
                raw.saturating_sub(margin).min(k)
            }
            KeyLengthRule::Fixed { key_len } => key_len.min(k),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodeSpec {
    k: usize,
    key_len: usize,
    generator: BitMatrix,
    parity_check: BitMatrix,
}

impl CodeSpec {
    /// Builds the spec from a full-rank `(k − key_len) × k` generator of `C_2`.
    pub fn from_generator(generator: BitMatrix) -> Result<Self, PrivacyError> {
        let parity_check = parity_check_of(&generator)?;
        Ok(Self {
            k: generator.num_cols(),
            key_len: parity_check.num_rows(),
            generator,
            parity_check,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn key_len(&self) -> usize {
        self.key_len
    }

    pub fn generator(&self) -> &BitMatrix {
        &self.generator
    }

    pub fn parity_check(&self) -> &BitMatrix {
        &self.parity_check
    }

    pub fn to_wire(&self) -> CodeSpecWire {
        CodeSpecWire {
            k: self.k,
            key_len: self.key_len,
            g2: self.generator.to_bitvec().to_hex(),
            substream: Stream::Code.label().to_string(),
        }
    }

    pub fn from_wire(wire: &CodeSpecWire) -> Result<Self, PrivacyError> {
        let rows = wire
            .k
            .checked_sub(wire.key_len)
            .ok_or_else(|| PrivacyError::Inconsistent("key_len exceeds k".into()))?;
        let bits = BitVec::from_hex(&wire.g2, rows * wire.k)?;
        let spec = Self::from_generator(BitMatrix::from_bitvec(&bits, rows, wire.k)?)?;
        if spec.key_len != wire.key_len {
            return Err(PrivacyError::Inconsistent(format!(
                "generator implies key_len {}, announced {}",
                spec.key_len, wire.key_len
            )));
        }
        Ok(spec)
    }
}

/// Uniformly random full-rank `rows × cols` matrix (rejection sampling).
pub fn random_full_rank<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> BitMatrix {
    assert!(rows <= cols, "{rows} rows cannot be independent in F_2^{cols}");
    loop {
        let g = BitMatrix::random(rows, cols, rng);
        if g.rank() == rows {
            return g;
        }
    }
}

/// Picks the key length, draws a random `C_2` and announces it.
pub fn build_code<R: Rng + ?Sized>(
    k: usize,
    eps_1: f64,
    rule: &KeyLengthRule,
    rng: &mut R,
    transcript: &mut Transcript,
) -> Result<CodeSpec, PrivacyError> {
    let key_len = rule.key_len(k, eps_1);
    if k == 0 || key_len == 0 {
        return Err(PrivacyError::NoKeyCapacity { k, eps_1 });
    }
    let spec = CodeSpec::from_generator(random_full_rank(k - key_len, k, rng))?;
    debug_assert_eq!(spec.key_len, key_len);
    transcript.push(Party::Alice, Message::CodeSpec(spec.to_wire()));
    Ok(spec)
}

/// Draws the pad `v` and announces `x ⊕ v`. Returns `(v, x ⊕ v)`.
pub fn alice_announce<R: Rng + ?Sized>(x: &BitVec, rng: &mut R, transcript: &mut Transcript) -> (BitVec, BitVec) {
    let v = BitVec::random(x.len(), rng);
    let announcement = x.xor(&v).expect("pad has the length of x");
    transcript.push(
        Party::Alice,
        Message::XvAnnounce {
            bits: announcement.clone(),
        },
    );
    (v, announcement)
}

/// Bob's view of the pad, assuming his string equals Alice's.
pub fn bob_recover(x_bob: &BitVec, announcement: &BitVec) -> Result<BitVec, Gf2Error> {
    announcement.xor(x_bob)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct KeyMaterial {
    pub key: BitVec,
    pub side: Party,
}

/// Coset label `H2 · v`.
pub fn extract_key(v: &BitVec, spec: &CodeSpec, side: Party) -> Result<KeyMaterial, Gf2Error> {
    Ok(KeyMaterial {
        key: spec.parity_check.mat_vec(v)?,
        side,
    })
}
