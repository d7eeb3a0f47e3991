//! Counter-based random substreams.
//!
//! Every random draw in a run comes from a ChaCha stream keyed by
//! `(seed, domain, a, b)`, so results do not depend on the order in which
//! worker threads pick up samples.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

pub type StreamRng = ChaCha12Rng;

/// Stream domains. Keep values stable: they are part of the reproducibility
/// contract of saved reports.
pub mod domain {
    pub const CERTIFY: u64 = 1;
    pub const CLOPPER_PEARSON: u64 = 2;
    pub const SUBSET: u64 = 3;
    pub const SYNTHETIC_DATA: u64 = 4;
    pub const SYNTHETIC_MODEL: u64 = 5;
    pub const AWGN_GRID: u64 = 6;
    pub const AWGN_NOISE: u64 = 7;
}

pub fn substream(seed: u64, domain: u64, a: u64, b: u64) -> StreamRng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&domain.to_le_bytes());
    key[16..24].copy_from_slice(&a.to_le_bytes());
    key[24..].copy_from_slice(&b.to_le_bytes());
    ChaCha12Rng::from_seed(key)
}
