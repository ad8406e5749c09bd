//! Counter-based random streams.
//!
//! Every rollout draws from its own ChaCha stream addressed by
//! `(seed, tag path, index)`, so results do not depend on how a batch is
//! scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// A node in the stream-key tree.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamKey(u64);

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl StreamKey {
    pub fn new(seed: u64) -> Self {
        Self(splitmix(seed))
    }

    /// Child key for a labelled sub-computation.
    pub fn child(self, tag: u64) -> Self {
        Self(splitmix(
            self.0 ^ splitmix(tag.wrapping_add(0x5851_F42D_4C95_7F2D)),
        ))
    }

    /// The `index`-th stream under this key.
    pub fn stream(self, index: u64) -> ChaCha8Rng {
        let mut seed = [0u8; 32];
        let mut z = self.0;
        for chunk in seed.chunks_exact_mut(8) {
            z = splitmix(z);
            chunk.copy_from_slice(&z.to_le_bytes());
        }
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(index);
        rng
    }

    pub fn raw(self) -> u64 {
        self.0
    }
}
