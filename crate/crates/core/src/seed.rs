//! Counter-based random streams.
//!
//! Every random decision in the crate draws from a stream identified by a
//! `(master, stream)` pair. Streams for nested work (a permutation inside a
//! feature shuffle inside a split) are derived by hashing the parent pair
//! with a purpose tag and a counter, never by advancing a shared generator,
//! so results do not depend on the order in which parallel workers run.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Identifies one reproducible random stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Seed {
    pub master: u64,
    pub stream: u64,
}

/// What a derived stream is used for. Distinct purposes never share a stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Split = 1,
    LabelShuffle = 2,
    FeatureShuffle = 3,
    Classifier = 4,
    Observed = 5,
    Tree = 6,
    Subject = 7,
    Dataset = 8,
    Design = 9,
    Replicate = 10,
    IdentityTest = 11,
    DiseaseTest = 12,
}

const fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl Seed {
    pub const fn new(master: u64) -> Self {
        Seed { master, stream: 0 }
    }

    pub const fn with_stream(master: u64, stream: u64) -> Self {
        Seed { master, stream }
    }

    /// Derives the child stream `(purpose, index)` of this stream.
    pub fn derive(&self, purpose: Purpose, index: u64) -> Seed {
        let parent = splitmix64(self.master ^ splitmix64(self.stream));
        Seed {
            master: splitmix64(parent ^ (purpose as u64).wrapping_mul(0xd6e8_feb8_6659_fd93)),
            stream: index,
        }
    }

    /// Same as [`Seed::derive`] but keyed by two counters, e.g. a permutation
    /// index and a retry attempt.
    pub fn derive2(&self, purpose: Purpose, index: u64, sub: u64) -> Seed {
        self.derive(purpose, index).derive(purpose, sub)
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master);
        rng.set_stream(self.stream);
        rng
    }
}

impl Default for Seed {
    fn default() -> Self {
        Seed::new(0)
    }
}
