//! Deterministic random streams derived from one u64 seed.
//!
//! Each consumer gets its own ChaCha stream selected by (purpose, index), so
//! adding or reordering consumers never perturbs the numbers another one sees.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    WorldPath = 1,
    WorldLatents = 2,
    Render = 3,
    DetourPlacement = 4,
    WakeupStarts = 5,
    Synthetic = 6,
}

/// Generator for stream `(purpose, index)` under `seed`.
pub fn stream(seed: u64, purpose: Purpose, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((purpose as u64) << 48) ^ index);
    rng
}
