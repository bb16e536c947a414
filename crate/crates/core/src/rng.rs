//! Domain-separated deterministic generators.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Returns a generator that is a pure function of `label` and `parts`.
pub(crate) fn stream(label: &str, parts: &[u64]) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update((label.len() as u32).to_be_bytes());
    h.update(label.as_bytes());
    for p in parts {
        h.update(p.to_be_bytes());
    }
    ChaCha8Rng::from_seed(h.finalize().into())
}
