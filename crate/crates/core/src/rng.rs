//! The single seedable generator used throughout: ChaCha8.
//!
//! Independent streams are derived from a base seed by offset (for example
//! `seed + domain_index` for per-domain sampling) so that changing one domain
//! or one consumer never perturbs another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub fn seeded(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Stream for a named purpose; distinct `purpose` values give unrelated streams
/// for the same seed.
pub fn stream(seed: u64, purpose: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(purpose);
    rng
}

/// Stream ids for [`stream`].
pub mod streams {
    pub const INIT: u64 = 1;
    pub const BATCH: u64 = 2;
    pub const SPLIT: u64 = 3;
    pub const THEORY: u64 = 4;
}
