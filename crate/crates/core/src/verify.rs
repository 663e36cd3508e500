//! Zero bit-flip verification of a subset.
//!
//! Alice announces `m` random nonzero strings `R_1 … R_m` of lengths
//! `n_s, n_s − 1, …, n_s − m + 1`. In round `j` both sides announce the
//! parity `s · R_j`; on agreement they drop the position of the last set bit
//! of `R_j` and compact the remaining indices, on disagreement the whole
//! subset is discarded. A subset that agrees in every round keeps `n_s − m`
//! bits, error-free except with probability at most `2^{-m}`.

use rand::Rng;

use crate::gf2::BitVec;
use crate::transcript::{Message, Party, Transcript};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum VerifyError {
    #[error("need 1 <= m < n_s, got m = {m}, n_s = {n_s}")]
    BadRoundCount { n_s: usize, m: usize },
    #[error("subset halves have {alice} and {bob} bits, parity string has {string}")]
    LengthMismatch { alice: usize, bob: usize, string: usize },
    #[error("parity string {index} is all zero")]
    ZeroString { index: usize },
    #[error("parity string {index} has length {len}, expected {expected}")]
    BadStringLength { index: usize, len: usize, expected: usize },
}

/// Random nonzero string of fair-coin bits; zero draws are resampled.
pub fn random_nonzero<R: Rng + ?Sized>(len: usize, rng: &mut R) -> BitVec {
    assert!(len > 0, "no nonzero string of length 0");
    loop {
        let r = BitVec::random(len, rng);
        if !r.is_zero() {
            return r;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParityStringSet {
    strings: Vec<BitVec>,
}

impl ParityStringSet {
    pub fn new(strings: Vec<BitVec>) -> Result<Self, VerifyError> {
        let n_s = strings.first().map_or(0, BitVec::len);
        if strings.is_empty() || strings.len() >= n_s {
            return Err(VerifyError::BadRoundCount { n_s, m: strings.len() });
        }
        for (index, r) in strings.iter().enumerate() {
            if r.len() != n_s - index {
                return Err(VerifyError::BadStringLength {
                    index,
                    len: r.len(),
                    expected: n_s - index,
                });
            }
            if r.is_zero() {
                return Err(VerifyError::ZeroString { index });
            }
        }
        Ok(Self { strings })
    }

    pub fn subset_len(&self) -> usize {
        self.strings[0].len()
    }

    pub fn rounds(&self) -> usize {
        self.strings.len()
    }

    pub fn strings(&self) -> &[BitVec] {
        &self.strings
    }
}

/// Draws and announces the `m` parity strings for one subset.
pub fn gen_parity_strings<R: Rng + ?Sized>(
    n_s: usize,
    m: usize,
    subset: usize,
    rng: &mut R,
    transcript: &mut Transcript,
) -> Result<ParityStringSet, VerifyError> {
    if m == 0 || m >= n_s {
        return Err(VerifyError::BadRoundCount { n_s, m });
    }
    let strings: Vec<BitVec> = (0..m).map(|j| random_nonzero(n_s - j, rng)).collect();
    for (j, r) in strings.iter().enumerate() {
        transcript.push(
            Party::Alice,
            Message::RString {
                subset: subset as u32,
                round: j as u32,
                bits: r.clone(),
            },
        );
    }
    ParityStringSet::new(strings)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RoundOutcome {
    /// Parities agreed; `removed` is the dropped position.
    Accept {
        alice: BitVec,
        bob: BitVec,
        removed: usize,
    },
    Reject,
}

pub fn verify_round(
    alice: &BitVec,
    bob: &BitVec,
    string: &BitVec,
    subset: usize,
    round: usize,
    transcript: &mut Transcript,
) -> Result<RoundOutcome, VerifyError> {
    if alice.len() != string.len() || bob.len() != string.len() {
        return Err(VerifyError::LengthMismatch {
            alice: alice.len(),
            bob: bob.len(),
            string: string.len(),
        });
    }
    let Some(last) = string.last_one() else {
        return Err(VerifyError::ZeroString { index: round });
    };
    let pa = alice.dot(string).expect("lengths checked");
    let pb = bob.dot(string).expect("lengths checked");
    for (party, parity) in [(Party::Alice, pa), (Party::Bob, pb)] {
        transcript.push(
            party,
            Message::SubsetParity {
                subset: subset as u32,
                round: round as u32,
                parity,
            },
        );
    }
    if pa != pb {
        return Ok(RoundOutcome::Reject);
    }
    let mut a = alice.clone();
    let mut b = bob.clone();
    a.remove(last);
    b.remove(last);
    Ok(RoundOutcome::Accept {
        alice: a,
        bob: b,
        removed: last,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum VerifyOutcome {
    Accept {
        alice: BitVec,
        bob: BitVec,
    },
    /// Round index (0-based) of the first parity mismatch.
    Reject {
        round: usize,
    },
}

impl VerifyOutcome {
    pub fn is_accept(&self) -> bool {
        matches!(self, VerifyOutcome::Accept { .. })
    }
}

/// Runs every round of `strings` on one subset, stopping at the first mismatch.
pub fn verify_subset(
    alice: &BitVec,
    bob: &BitVec,
    strings: &ParityStringSet,
    subset: usize,
    transcript: &mut Transcript,
) -> Result<VerifyOutcome, VerifyError> {
    if alice.len() != strings.subset_len() || bob.len() != strings.subset_len() {
        return Err(VerifyError::LengthMismatch {
            alice: alice.len(),
            bob: bob.len(),
            string: strings.subset_len(),
        });
    }
    let mut a = alice.clone();
    let mut b = bob.clone();
    for (round, r) in strings.strings().iter().enumerate() {
        match verify_round(&a, &b, r, subset, round, transcript)? {
            RoundOutcome::Accept { alice, bob, .. } => {
                a = alice;
                b = bob;
            }
            RoundOutcome::Reject => return Ok(VerifyOutcome::Reject { round }),
        }
    }
    Ok(VerifyOutcome::Accept { alice: a, bob: b })
}
