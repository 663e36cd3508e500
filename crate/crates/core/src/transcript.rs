//! Ordered log of everything announced over the public classical channel.
//!
//! Messages are typed in memory and serialized to a compact binary payload
//! on export. The JSON Lines form is one object per record:
//! `{"seq":0,"sender":"A","kind":"bases","payload":"<hex>"}`.
//!
//! Binary payload conventions: integers are `u32` little-endian, bit strings
//! are a `u32` bit length followed by the bits packed MSB-first.

use std::fmt;
use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::gf2::{BitVec, Gf2Error};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Party {
    #[serde(rename = "A")]
    Alice,
    #[serde(rename = "B")]
    Bob,
}

impl fmt::Display for Party {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Party::Alice => "A",
            Party::Bob => "B",
        })
    }
}

/// Wire description of the privacy-amplification code.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodeSpecWire {
    pub k: usize,
    pub key_len: usize,
    /// Generator of the hashed-out subcode, row-major, `(k - key_len) × k` bits.
    pub g2: String,
    pub substream: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Message {
    /// Basis per transmitted qubit, `1 = X`.
    Bases {
        bases: BitVec,
    },
    /// Over the sifted positions: which are Z-basis check bits and which
    /// Z-basis bits are thrown away to leave exactly `n` code bits.
    Selection {
        z_checks: BitVec,
        discarded: BitVec,
    },
    /// Values of all check bits, in sifted order.
    CheckReveal {
        values: BitVec,
    },
    /// Pairing permutation of one crude-correction round.
    Pairing {
        round: u32,
        permutation: Vec<u32>,
    },
    /// Local parities of every pair of a crude-correction round.
    PairParities {
        round: u32,
        parities: BitVec,
    },
    RString {
        subset: u32,
        round: u32,
        bits: BitVec,
    },
    /// One party's parity of a subset against a random string.
    SubsetParity {
        subset: u32,
        round: u32,
        parity: bool,
    },
    XvAnnounce {
        bits: BitVec,
    },
    CodeSpec(CodeSpecWire),
    Abort {
        reason: String,
    },
}

pub mod kind {
    pub const BASES: &str = "bases";
    pub const SELECTION: &str = "selection";
    pub const CHECK_REVEAL: &str = "check_reveal";
    pub const PAIRING: &str = "pairing";
    pub const PARITY_ACK: &str = "parity_ack";
    pub const R_STRING: &str = "R_string";
    pub const XV_ANNOUNCE: &str = "xv_announce";
    pub const CODE_SPEC: &str = "code_spec";
    pub const ABORT: &str = "abort";
}

const ACK_PAIRS: u8 = 0;
const ACK_SUBSET: u8 = 1;

#[derive(Debug, thiserror::Error)]
pub enum TranscriptError {
    #[error("unknown message kind {0:?}")]
    UnknownKind(String),
    #[error("truncated or malformed {kind} payload")]
    Malformed { kind: &'static str },
    #[error("bit string: {0}")]
    Bits(#[from] Gf2Error),
    #[error("payload hex: {0}")]
    Hex(#[from] hex::FromHexError),
    #[error("line {line}: {source}")]
    Json { line: usize, source: serde_json::Error },
    #[error("sequence numbers must strictly increase (got {got} after {prev})")]
    Sequence { prev: u64, got: u64 },
    #[error(transparent)]
    Io(#[from] io::Error),
}

struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn bits(&mut self, bits: &BitVec) {
        self.u32(bits.len() as u32);
        self.0.extend_from_slice(&bits.to_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    kind: &'static str,
}

impl Reader<'_> {
    fn malformed(&self) -> TranscriptError {
        TranscriptError::Malformed { kind: self.kind }
    }

    fn take(&mut self, n: usize) -> Result<&[u8], TranscriptError> {
        if self.buf.len() < n {
            return Err(self.malformed());
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Ok(head)
    }

    fn u8(&mut self) -> Result<u8, TranscriptError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, TranscriptError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn bits(&mut self) -> Result<BitVec, TranscriptError> {
        let len = self.u32()? as usize;
        let bytes = self.take(len.div_ceil(8))?;
        Ok(BitVec::from_bytes(bytes, len)?)
    }

    fn finish(self) -> Result<(), TranscriptError> {
        if self.buf.is_empty() {
            Ok(())
        } else {
            Err(self.malformed())
        }
    }
}

impl Message {
    pub fn kind(&self) -> &'static str {
        match self {
            Message::Bases { .. } => kind::BASES,
            Message::Selection { .. } => kind::SELECTION,
            Message::CheckReveal { .. } => kind::CHECK_REVEAL,
            Message::Pairing { .. } => kind::PAIRING,
            Message::PairParities { .. } | Message::SubsetParity { .. } => kind::PARITY_ACK,
            Message::RString { .. } => kind::R_STRING,
            Message::XvAnnounce { .. } => kind::XV_ANNOUNCE,
            Message::CodeSpec(_) => kind::CODE_SPEC,
            Message::Abort { .. } => kind::ABORT,
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer(Vec::new());
        match self {
            Message::Bases { bases } => w.bits(bases),
            Message::Selection { z_checks, discarded } => {
                w.bits(z_checks);
                w.bits(discarded);
            }
            Message::CheckReveal { values } => w.bits(values),
            Message::Pairing { round, permutation } => {
                w.u32(*round);
                w.u32(permutation.len() as u32);
                for &p in permutation {
                    w.u32(p);
                }
            }
            Message::PairParities { round, parities } => {
                w.0.push(ACK_PAIRS);
                w.u32(*round);
                w.bits(parities);
            }
            Message::SubsetParity { subset, round, parity } => {
                w.0.push(ACK_SUBSET);
                w.u32(*subset);
                w.u32(*round);
                w.0.push(*parity as u8);
            }
            Message::RString { subset, round, bits } => {
                w.u32(*subset);
                w.u32(*round);
                w.bits(bits);
            }
            Message::XvAnnounce { bits } => w.bits(bits),
            Message::CodeSpec(spec) => {
                w.0 = serde_json::to_vec(spec).expect("code spec serializes");
            }
            Message::Abort { reason } => w.0.extend_from_slice(reason.as_bytes()),
        }
        w.0
    }

    pub fn decode(kind_str: &str, payload: &[u8]) -> Result<Message, TranscriptError> {
        let kind = match kind_str {
            kind::BASES => kind::BASES,
            kind::SELECTION => kind::SELECTION,
            kind::CHECK_REVEAL => kind::CHECK_REVEAL,
            kind::PAIRING => kind::PAIRING,
            kind::PARITY_ACK => kind::PARITY_ACK,
            kind::R_STRING => kind::R_STRING,
            kind::XV_ANNOUNCE => kind::XV_ANNOUNCE,
            kind::CODE_SPEC => kind::CODE_SPEC,
            kind::ABORT => kind::ABORT,
            other => return Err(TranscriptError::UnknownKind(other.to_string())),
        };
        let mut r = Reader { buf: payload, kind };
        let msg = match kind {
            kind::BASES => Message::Bases { bases: r.bits()? },
            kind::SELECTION => Message::Selection {
                z_checks: r.bits()?,
                discarded: r.bits()?,
            },
            kind::CHECK_REVEAL => Message::CheckReveal { values: r.bits()? },
            kind::PAIRING => {
                let round = r.u32()?;
                let count = r.u32()? as usize;
                let permutation = (0..count).map(|_| r.u32()).collect::<Result<_, _>>()?;
                Message::Pairing { round, permutation }
            }
            kind::PARITY_ACK => match r.u8()? {
                ACK_PAIRS => Message::PairParities {
                    round: r.u32()?,
                    parities: r.bits()?,
                },
                ACK_SUBSET => {
                    let subset = r.u32()?;
                    let round = r.u32()?;
                    let parity = match r.u8()? {
                        0 => false,
                        1 => true,
                        _ => return Err(r.malformed()),
                    };
                    Message::SubsetParity { subset, round, parity }
                }
                _ => return Err(r.malformed()),
            },
            kind::R_STRING => Message::RString {
                subset: r.u32()?,
                round: r.u32()?,
                bits: r.bits()?,
            },
            kind::XV_ANNOUNCE => Message::XvAnnounce { bits: r.bits()? },
            kind::CODE_SPEC => {
                let spec = serde_json::from_slice(payload).map_err(|_| r.malformed())?;
                return Ok(Message::CodeSpec(spec));
            }
            kind::ABORT => {
                let reason = String::from_utf8(payload.to_vec()).map_err(|_| r.malformed())?;
                return Ok(Message::Abort { reason });
            }
            _ => unreachable!(),
        };
        r.finish()?;
        Ok(msg)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Record {
    pub seq: u64,
    pub sender: Party,
    pub message: Message,
}

#[derive(Serialize, Deserialize)]
struct JsonRecord {
    seq: u64,
    sender: Party,
    kind: String,
    payload: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Transcript {
    records: Vec<Record>,
}

impl Transcript {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, sender: Party, message: Message) -> u64 {
        let seq = self.records.len() as u64;
        self.records.push(Record { seq, sender, message });
        seq
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn messages_of_kind<'a>(&'a self, kind: &'a str) -> impl Iterator<Item = &'a Record> + 'a {
        self.records.iter().filter(move |r| r.message.kind() == kind)
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> io::Result<()> {
        for r in &self.records {
            let line = JsonRecord {
                seq: r.seq,
                sender: r.sender,
                kind: r.message.kind().to_string(),
                payload: hex::encode(r.message.encode()),
            };
            serde_json::to_writer(&mut out, &line)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("JSON is UTF-8")
    }

    pub fn read_jsonl<R: BufRead>(input: R) -> Result<Transcript, TranscriptError> {
        let mut records: Vec<Record> = Vec::new();
        for (i, line) in input.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let raw: JsonRecord =
                serde_json::from_str(&line).map_err(|source| TranscriptError::Json { line: i + 1, source })?;
            if let Some(prev) = records.last() {
                if raw.seq <= prev.seq {
                    return Err(TranscriptError::Sequence {
                        prev: prev.seq,
                        got: raw.seq,
                    });
                }
            }
            let payload = hex::decode(&raw.payload)?;
            records.push(Record {
                seq: raw.seq,
                sender: raw.sender,
                message: Message::decode(&raw.kind, &payload)?,
            });
        }
        Ok(Transcript { records })
    }

    pub fn from_jsonl(text: &str) -> Result<Transcript, TranscriptError> {
        Self::read_jsonl(text.as_bytes())
    }
}
