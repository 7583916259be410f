//! Named pseudo-random sub-streams derived from one experiment seed.
//!
//! Each mechanism draws from its own ChaCha stream, so switching a feature on
//! never shifts the numbers another feature sees.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngStreams {
    seed: u64,
}

impl RngStreams {
    pub fn new(seed: u64) -> Self {
        RngStreams { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self, name: &str) -> SimRng {
        self.indexed(name, 0)
    }

    /// Sub-stream for one entity (UE, link, cell) under a named purpose.
    pub fn indexed(&self, name: &str, index: u64) -> SimRng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(fnv1a(name.as_bytes()) ^ index.wrapping_mul(0x9e37_79b9_7f4a_7c15));
        rng
    }
}

// stable across platforms and releases, unlike std's DefaultHasher
fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}
