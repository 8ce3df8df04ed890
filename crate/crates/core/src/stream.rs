//! Counter-based random substreams.
//!
//! Every random quantity in a run is drawn from a ChaCha8 generator keyed by
//! `(run key, slot, index)`. The key is derived from a single master seed, so a
//! candidate's `j`-th pseudo-sample is the same no matter which thread
//! produces it or in which order candidates are visited.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// The generator handed to every simulation call.
pub type StreamRng = ChaCha8Rng;

/// Slot reserved for the observed sample when it is simulated.
pub const SLOT_OBSERVED: u64 = 1;
/// Slot for the candidate draws from the prior.
pub const SLOT_PRIOR: u64 = 2;
/// Slot for per-candidate pseudo-samples.
pub const SLOT_SIMULATION: u64 = 3;
/// Slot for projection directions.
pub const SLOT_DIRECTIONS: u64 = 4;

const fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A family of independent substreams derived from one key.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Streams {
    key: u64,
}

impl Streams {
    pub fn new(seed: u64) -> Self {
        Self { key: seed }
    }

    pub fn key(&self) -> u64 {
        self.key
    }

    /// A child family, e.g. one per experiment arm or repetition.
    pub fn derive(&self, label: u64) -> Self {
        Self {
            key: splitmix64(splitmix64(self.key) ^ label.rotate_left(17) ^ 0xA5A5_5A5A_0F0F_F0F0),
        }
    }

    /// The generator for `(slot, index, replicate)`. Distinct triples under the
    /// same key give distinct ChaCha seeds.
    pub fn rng(&self, slot: u64, index: u64, replicate: u64) -> StreamRng {
        let mut seed = [0u8; 32];
        seed[0..8].copy_from_slice(&self.key.to_le_bytes());
        seed[8..16].copy_from_slice(&slot.to_le_bytes());
        seed[16..24].copy_from_slice(&index.to_le_bytes());
        seed[24..32].copy_from_slice(&replicate.to_le_bytes());
        ChaCha8Rng::from_seed(seed)
    }

    pub fn observed(&self) -> StreamRng {
        self.rng(SLOT_OBSERVED, 0, 0)
    }

    pub fn prior(&self) -> StreamRng {
        self.rng(SLOT_PRIOR, 0, 0)
    }

    pub fn directions(&self) -> StreamRng {
        self.rng(SLOT_DIRECTIONS, 0, 0)
    }

    /// Substreams for the `index`-th candidate parameter.
    pub fn candidate(&self, index: usize) -> CandidateStreams {
        CandidateStreams {
            streams: *self,
            index: index as u64,
        }
    }
}

/// The pseudo-sample streams of one candidate. Replicate 0 is the single draw
/// a plain rejection run uses; replicates `1..=M` are the additional draws.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CandidateStreams {
    streams: Streams,
    index: u64,
}

impl CandidateStreams {
    pub fn replicate(&self, replicate: usize) -> StreamRng {
        self.streams
            .rng(SLOT_SIMULATION, self.index, replicate as u64)
    }
}
