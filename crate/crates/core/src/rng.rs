//! Hierarchical, scheduling-independent random streams.
//!
//! Every unit of parallel work (a replicate, a correction, a particle-filter
//! run) draws from its own stream derived from the run seed and a path of
//! labels, so results do not depend on which worker executes the work.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Generator used for all simulation.
pub type SimRng = ChaCha8Rng;

/// A node in the stream derivation tree.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct StreamSeed(u64);

impl StreamSeed {
    pub fn new(seed: u64) -> Self {
        StreamSeed(splitmix64(seed ^ 0x6a09_e667_f3bc_c908))
    }

    /// Child stream identified by a label, e.g. `"p1"` or `"corr"`.
    pub fn child(self, label: &str) -> Self {
        StreamSeed(splitmix64(self.0 ^ fnv1a(label.as_bytes())))
    }

    /// Child stream identified by an index, e.g. a replicate number.
    pub fn index(self, i: u64) -> Self {
        StreamSeed(splitmix64(self.0.rotate_left(17) ^ splitmix64(i.wrapping_add(0x9e37_79b9))))
    }

    pub fn rng(self) -> SimRng {
        SimRng::seed_from_u64(self.0)
    }

    pub fn raw(self) -> u64 {
        self.0
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3))
}
