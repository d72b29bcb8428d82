//! Counter-based random streams.
//!
//! Every random consumer (a block of Monte Carlo trials, a case, a CV
//! repeat, a bootstrap resample) gets its own generator derived from the
//! run seed plus a stable key, so results do not depend on how work is
//! scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Generator for numbered stream `index` under `seed`.
pub fn indexed(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Generator keyed by a domain tag and a string key (e.g. a case id).
pub fn keyed(seed: u64, domain: &str, key: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, domain, key))
}

/// Stable 64-bit seed from `(seed, domain, key)`.
pub fn derive_seed(seed: u64, domain: &str, key: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update((domain.len() as u64).to_le_bytes());
    hasher.update(domain.as_bytes());
    hasher.update(key.as_bytes());
    let digest = hasher.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}
