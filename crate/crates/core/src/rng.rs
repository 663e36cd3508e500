//! Labeled random substreams derived from one session seed.
//!
//! Each consumer of randomness owns a separate ChaCha stream, so changing how
//! much one stage draws never perturbs any other stage.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stream {
    AliceBits,
    AliceBases,
    BobBases,
    BobOutcomes,
    Channel,
    Eve,
    Selection,
    Pairing,
    ParityStrings,
    Code,
    Pad,
}

impl Stream {
    pub const ALL: [Stream; 11] = [
        Stream::AliceBits,
        Stream::AliceBases,
        Stream::BobBases,
        Stream::BobOutcomes,
        Stream::Channel,
        Stream::Eve,
        Stream::Selection,
        Stream::Pairing,
        Stream::ParityStrings,
        Stream::Code,
        Stream::Pad,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Stream::AliceBits => "alice-bits",
            Stream::AliceBases => "alice-bases",
            Stream::BobBases => "bob-bases",
            Stream::BobOutcomes => "bob-outcomes",
            Stream::Channel => "channel",
            Stream::Eve => "eve",
            Stream::Selection => "selection",
            Stream::Pairing => "pairing",
            Stream::ParityStrings => "parity-strings",
            Stream::Code => "code",
            Stream::Pad => "pad",
        }
    }

    fn id(self) -> u64 {
        Stream::ALL.iter().position(|&s| s == self).unwrap() as u64 + 1
    }
}

pub fn substream(seed: u64, stream: Stream) -> SimRng {
    let mut rng = SimRng::seed_from_u64(seed);
    rng.set_stream(stream.id());
    rng
}

/// One generator per labeled stream.
#[derive(Debug, Clone)]
pub struct SessionRngs {
    pub alice_bits: SimRng,
    pub alice_bases: SimRng,
    pub bob_bases: SimRng,
    pub bob_outcomes: SimRng,
    pub channel: SimRng,
    pub eve: SimRng,
    pub selection: SimRng,
    pub pairing: SimRng,
    pub parity_strings: SimRng,
    pub code: SimRng,
    pub pad: SimRng,
}

impl SessionRngs {
    pub fn from_seed(seed: u64) -> Self {
        Self {
            alice_bits: substream(seed, Stream::AliceBits),
            alice_bases: substream(seed, Stream::AliceBases),
            bob_bases: substream(seed, Stream::BobBases),
            bob_outcomes: substream(seed, Stream::BobOutcomes),
            channel: substream(seed, Stream::Channel),
            eve: substream(seed, Stream::Eve),
            selection: substream(seed, Stream::Selection),
            pairing: substream(seed, Stream::Pairing),
            parity_strings: substream(seed, Stream::ParityStrings),
            code: substream(seed, Stream::Code),
            pad: substream(seed, Stream::Pad),
        }
    }
}
