//! Deterministic seed derivation.
//!
//! Every random stream in a run is keyed by `(master_seed, purpose, a, b)`
//! and mixed with the SplitMix64 finalizer:
//!
//! ```text
//! h = master_seed
//! for word in [purpose, a, b]:
//!     h = splitmix64(h ^ splitmix64(word))
//! ```
//!
//! `splitmix64(z)` adds the golden-ratio increment `0x9E3779B97F4A7C15` and
//! applies the two multiply-xorshift rounds of the reference generator.
//! Because seeds depend only on the key, results do not depend on the order
//! in which clients or grid cells execute.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream identifiers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    ModelInit = 1,
    Resample = 2,
    Shuffle = 3,
    Domain = 4,
}

pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(master_seed: u64, purpose: Purpose, a: u64, b: u64) -> u64 {
    [purpose as u64, a, b]
        .into_iter()
        .fold(master_seed, |h, w| splitmix64(h ^ splitmix64(w)))
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
