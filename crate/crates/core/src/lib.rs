//! Deterministic simulator for a simplified four-state BB84 protocol.
//!
//! Pipeline: qubits over a Pauli channel ([`qsim`]), sifting and check-bit
//! estimation ([`session`]), random-pairing parity correction
//! ([`reconcile`]), zero-error subset verification ([`verify`]) and coset
//! key extraction ([`privacy`]). [`analysis`] holds the closed-form bounds.
//! Every random choice comes from a named ChaCha substream of one seed, so a
//! `(config, seed)` pair fixes the whole run.

pub mod analysis;
pub mod batch;
pub mod gf2;
pub mod privacy;
pub mod qsim;
pub mod reconcile;
pub mod replay;
pub mod rng;
pub mod session;
pub mod transcript;
pub mod verify;

pub use gf2::{BitMatrix, BitVec};
pub use session::{run_session, Outcome, ProtocolConfig, SessionResult};
pub use transcript::Transcript;
