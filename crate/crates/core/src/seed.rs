//! Seed derivation and digests.
//!
//! Every component draws randomness from a child seed computed as the first
//! eight bytes of `SHA-256(master_seed_le || label)`. Labels are stable
//! strings such as `"packer/bernoulli/17"`, so results never depend on
//! thread scheduling or shard layout.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type SeededRng = ChaCha8Rng;

pub fn derive_seed(master: u64, label: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(master.to_le_bytes());
    hasher.update(label.as_bytes());
    let digest = hasher.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

pub fn rng_for(master: u64, label: &str) -> SeededRng {
    SeededRng::seed_from_u64(derive_seed(master, label))
}

/// Streaming SHA-256 with a hex-encoded result.
#[derive(Default, Clone)]
pub struct Digest256(Sha256);

impl Digest256 {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn update(&mut self, bytes: &[u8]) {
        self.0.update(bytes);
    }

    pub fn update_u32s(&mut self, values: &[u32]) {
        for v in values {
            self.0.update(v.to_le_bytes());
        }
    }

    pub fn update_f64s(&mut self, values: &[f64]) {
        for v in values {
            self.0.update(v.to_le_bytes());
        }
    }

    pub fn finish_hex(self) -> String {
        hex::encode(self.0.finalize())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut d = Digest256::new();
    d.update(bytes);
    d.finish_hex()
}
