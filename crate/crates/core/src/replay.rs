//! Rebuilds a party's key from the public transcript plus that party's raw
//! per-qubit bits. Used to audit that the transcript carries every public
//! choice the protocol made.

use std::collections::HashMap;

use crate::gf2::BitVec;
use crate::privacy::{CodeSpec, PrivacyError};
use crate::reconcile::{PairingPlan, ReconcileError};
use crate::transcript::{Message, Party, Transcript};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ReplayError {
    #[error("session aborted: {0}")]
    Aborted(String),
    #[error("missing {0} message")]
    Missing(&'static str),
    #[error("inconsistent transcript: {0}")]
    Inconsistent(String),
    #[error("raw bits cover {got} qubits, transcript announces {expected}")]
    RawLength { got: usize, expected: usize },
    #[error(transparent)]
    Pairing(#[from] ReconcileError),
    #[error(transparent)]
    Code(#[from] PrivacyError),
}

fn inconsistent(msg: impl Into<String>) -> ReplayError {
    ReplayError::Inconsistent(msg.into())
}

#[derive(Default)]
struct Indexed<'a> {
    bases: HashMap<Party, &'a BitVec>,
    selection: Option<(&'a BitVec, &'a BitVec)>,
    pairings: Vec<(u32, &'a [u32])>,
    pair_parities: HashMap<(u32, Party), &'a BitVec>,
    r_strings: Vec<(u32, u32, &'a BitVec)>,
    subset_parities: HashMap<(u32, u32, Party), bool>,
    code_spec: Option<&'a crate::transcript::CodeSpecWire>,
    xv: Option<&'a BitVec>,
}

fn index(transcript: &Transcript) -> Result<Indexed<'_>, ReplayError> {
    let mut ix = Indexed::default();
    for rec in transcript.records() {
        match &rec.message {
            Message::Bases { bases } => {
                ix.bases.insert(rec.sender, bases);
            }
            Message::Selection { z_checks, discarded } => ix.selection = Some((z_checks, discarded)),
            Message::CheckReveal { .. } => {}
            Message::Pairing { round, permutation } => ix.pairings.push((*round, permutation)),
            Message::PairParities { round, parities } => {
                ix.pair_parities.insert((*round, rec.sender), parities);
            }
            Message::RString { subset, round, bits } => ix.r_strings.push((*subset, *round, bits)),
            Message::SubsetParity { subset, round, parity } => {
                ix.subset_parities.insert((*subset, *round, rec.sender), *parity);
            }
            Message::XvAnnounce { bits } => ix.xv = Some(bits),
            Message::CodeSpec(wire) => ix.code_spec = Some(wire),
            Message::Abort { reason } => return Err(ReplayError::Aborted(reason.clone())),
        }
    }
    Ok(ix)
}

/// Returns the key that a party holding `raw_bits` (one bit per transmitted
/// qubit) derives from `transcript`.
pub fn reconstruct_key(transcript: &Transcript, raw_bits: &BitVec) -> Result<BitVec, ReplayError> {
    let ix = index(transcript)?;
    let alice_bases = ix.bases.get(&Party::Alice).ok_or(ReplayError::Missing("bases"))?;
    let bob_bases = ix.bases.get(&Party::Bob).ok_or(ReplayError::Missing("bases"))?;
    if alice_bases.len() != bob_bases.len() {
        return Err(inconsistent("basis announcements differ in length"));
    }
    if raw_bits.len() != alice_bases.len() {
        return Err(ReplayError::RawLength {
            got: raw_bits.len(),
            expected: alice_bases.len(),
        });
    }

    let sifted: Vec<usize> = (0..alice_bases.len())
        .filter(|&i| alice_bases.get(i) == bob_bases.get(i))
        .collect();
    let (z_checks, discarded) = ix.selection.ok_or(ReplayError::Missing("selection"))?;
    if z_checks.len() != sifted.len() || discarded.len() != sifted.len() {
        return Err(inconsistent("selection does not cover the sifted positions"));
    }
    // Basis bit 1 is X; X-basis positions are all checks.
    let code: Vec<usize> = (0..sifted.len())
        .filter(|&j| !alice_bases.get(sifted[j]) && !z_checks.get(j) && !discarded.get(j))
        .map(|j| sifted[j])
        .collect();
    let mut bits = raw_bits.select(&code);

    let mut pairings = ix.pairings.clone();
    pairings.sort_by_key(|&(r, _)| r);
    for (round, perm) in pairings {
        let plan = PairingPlan::new(perm.iter().map(|&p| p as usize).collect())?;
        if plan.len() != bits.len() {
            return Err(inconsistent(format!(
                "round {round} pairs {} bits, have {}",
                plan.len(),
                bits.len()
            )));
        }
        let pa = ix
            .pair_parities
            .get(&(round, Party::Alice))
            .ok_or(ReplayError::Missing("parity_ack"))?;
        let pb = ix
            .pair_parities
            .get(&(round, Party::Bob))
            .ok_or(ReplayError::Missing("parity_ack"))?;
        let mut kept: Vec<usize> = plan
            .pairs()
            .enumerate()
            .filter(|&(p, _)| pa.get(p) == pb.get(p))
            .map(|(_, (j, _))| j)
            .collect();
        kept.sort_unstable();
        bits = bits.select(&kept);
    }

    let mut strings: HashMap<u32, Vec<(u32, &BitVec)>> = HashMap::new();
    for &(subset, round, r) in &ix.r_strings {
        strings.entry(subset).or_default().push((round, r));
    }
    let n_s = strings
        .get(&0)
        .and_then(|s| s.iter().find(|(round, _)| *round == 0))
        .map(|(_, r)| r.len())
        .ok_or(ReplayError::Missing("R_string"))?;
    let q = bits.len() / n_s;
    if strings.len() != q {
        return Err(inconsistent(format!(
            "{} bits give {q} subsets, {} verified",
            bits.len(),
            strings.len()
        )));
    }

    let mut x = BitVec::zeros(0);
    for s in 0..q as u32 {
        let mut rounds = strings.remove(&s).ok_or(ReplayError::Missing("R_string"))?;
        rounds.sort_by_key(|&(r, _)| r);
        let start = s as usize * n_s;
        let mut sub = bits.select(&(start..start + n_s).collect::<Vec<_>>());
        let mut accepted = true;
        for (round, r) in rounds {
            let a = ix.subset_parities.get(&(s, round, Party::Alice));
            let b = ix.subset_parities.get(&(s, round, Party::Bob));
            let (Some(a), Some(b)) = (a, b) else {
                return Err(ReplayError::Missing("parity_ack"));
            };
            if a != b {
                accepted = false;
                break;
            }
            if r.len() != sub.len() {
                return Err(inconsistent(format!(
                    "subset {s} round {round}: string length {}",
                    r.len()
                )));
            }
            let last = r.last_one().ok_or_else(|| inconsistent("zero parity string"))?;
            sub.remove(last);
        }
        if accepted {
            x.extend_from(&sub);
        }
    }

    let spec = CodeSpec::from_wire(ix.code_spec.ok_or(ReplayError::Missing("code_spec"))?)?;
    let xv = ix.xv.ok_or(ReplayError::Missing("xv_announce"))?;
    if xv.len() != x.len() || spec.k() != x.len() {
        return Err(inconsistent(format!(
            "verified {} bits, announcement has {} and code length {}",
            x.len(),
            xv.len(),
            spec.k()
        )));
    }
    let v = xv.xor(&x).expect("lengths checked");
    Ok(spec.parity_check().mat_vec(&v).expect("code length checked"))
}
