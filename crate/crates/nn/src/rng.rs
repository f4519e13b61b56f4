use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};

pub type Rng = Xoshiro256PlusPlus;

/// Identifies a reproducible random stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub algorithm: RngAlgorithm,
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RngAlgorithm {
    /// xoshiro256++ seeded through splitmix64.
    Xoshiro256PlusPlus,
}

impl RngState {
    pub fn new(seed: u64) -> Self {
        Self {
            algorithm: RngAlgorithm::Xoshiro256PlusPlus,
            seed,
        }
    }

    pub fn rng(&self) -> Rng {
        match self.algorithm {
            RngAlgorithm::Xoshiro256PlusPlus => Xoshiro256PlusPlus::seed_from_u64(self.seed),
        }
    }
}

pub fn seeded_rng(seed: u64) -> Rng {
    RngState::new(seed).rng()
}

/// 64-bit FNV-1a; stable across platforms and releases.
pub fn stable_hash(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Seed for an independent sub-stream identified by `tag`.
pub fn derive_seed(seed: u64, tag: &str) -> u64 {
    seed ^ stable_hash(tag.as_bytes())
}
