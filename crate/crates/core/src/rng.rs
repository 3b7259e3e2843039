//! Seed plumbing. Every random stream in the crate is a ChaCha8 generator
//! seeded from an explicit `u64`, so results are reproducible across
//! platforms.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Mixes a base seed with a sequence of salts into a new seed (splitmix64
/// finaliser per step). Used to derive per-item, per-stage and per-epoch
/// streams from one user-visible seed.
pub fn derive_seed(base: u64, salts: &[u64]) -> u64 {
    let mut state = base ^ 0x9E37_79B9_7F4A_7C15;
    for &salt in salts {
        state = splitmix(state ^ splitmix(salt.wrapping_add(0xD1B5_4A32_D192_ED03)));
    }
    splitmix(state)
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
