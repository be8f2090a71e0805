//! Deterministic seed streams.
//!
//! Every random choice in the crate is drawn from a [`SeedHandle`]. Child
//! handles are derived by mixing in integers or labels, so the value a
//! consumer sees depends only on *what* it is (iteration 17, model
//! `randomForest`) and never on the order in which work is scheduled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SeedHandle(pub u64);

impl SeedHandle {
    pub fn new(seed: u64) -> Self {
        SeedHandle(seed)
    }

    pub fn value(self) -> u64 {
        self.0
    }

    /// Child stream keyed by an integer.
    pub fn derive(self, index: u64) -> SeedHandle {
        SeedHandle(splitmix64(
            self.0 ^ splitmix64(index.wrapping_add(0x632b_e59b_d9b4_e019)),
        ))
    }

    /// Child stream keyed by a label.
    pub fn derive_label(self, label: &str) -> SeedHandle {
        SeedHandle(splitmix64(self.0 ^ fnv1a(label.as_bytes())))
    }

    pub fn rng(self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.0)
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}
