//! Named random streams.
//!
//! Every random draw in the crate comes from a stream derived from a master
//! seed and a purpose string (plus an optional index), so adding a phase or
//! reordering work never perturbs the randomness another phase sees.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type RngStream = ChaCha8Rng;

/// Stream keyed by `(seed, purpose)`.
pub fn stream(seed: u64, purpose: &str) -> RngStream {
    RngStream::from_seed(derive(seed, purpose, None))
}

/// Stream keyed by `(seed, purpose, index)`, e.g. one per episode.
pub fn indexed(seed: u64, purpose: &str, index: u64) -> RngStream {
    RngStream::from_seed(derive(seed, purpose, Some(index)))
}

/// Child seed for a sub-phase, e.g. one per shot value in an ablation.
pub fn child_seed(seed: u64, purpose: &str) -> u64 {
    let bytes = derive(seed, purpose, None);
    u64::from_le_bytes(bytes[..8].try_into().expect("8 bytes"))
}

fn derive(seed: u64, purpose: &str, index: Option<u64>) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update((purpose.len() as u64).to_le_bytes());
    h.update(purpose.as_bytes());
    if let Some(i) = index {
        h.update([1u8]);
        h.update(i.to_le_bytes());
    } else {
        h.update([0u8]);
    }
    h.finalize().into()
}
