//! Named, seeded random substreams.
//!
//! Every random draw in the crate comes from a ChaCha stream whose key is the
//! SHA-256 of `(master seed, label, index)`. Substreams for different apps,
//! trees or restarts are therefore independent of evaluation order and of the
//! number of worker threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type Rng = ChaCha8Rng;

/// Derives a child seed from a master seed and a named index.
pub fn derive_seed(seed: u64, label: &str, index: u64) -> u64 {
    let digest = digest(seed, label, index);
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

/// Returns the substream for `(seed, label, index)`.
pub fn substream(seed: u64, label: &str, index: u64) -> Rng {
    Rng::from_seed(digest(seed, label, index))
}

fn digest(seed: u64, label: &str, index: u64) -> [u8; 32] {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update((label.len() as u64).to_le_bytes());
    hasher.update(label.as_bytes());
    hasher.update(index.to_le_bytes());
    hasher.finalize().into()
}
