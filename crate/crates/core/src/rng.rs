//! Reproducible random streams.
//!
//! Every parallel work item draws from its own ChaCha stream selected by the
//! item index, so results do not depend on thread count or scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

/// Independent generator for work item `index` under `master` seed.
pub fn stream(master: u64, index: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(master);
    rng.set_stream(index);
    rng
}

/// `n` independent, splittable streams.
pub fn seed_streams(master: u64, n: usize) -> Vec<ChaCha20Rng> {
    (0..n as u64).map(|i| stream(master, i)).collect()
}
