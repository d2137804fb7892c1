//! Seed derivation.
//!
//! Every random draw in the pipeline comes from a stream keyed by the master
//! seed plus a path such as `(purpose, epoch, image_id)`. Streams do not depend
//! on the order in which images are processed, so batches can be farmed out to
//! workers without changing results.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Stream purposes, mixed into the key so different consumers never share draws.
pub mod purpose {
    pub const AUGMENT: u64 = 0xA11;
    pub const DISTORT: u64 = 0xD15;
    pub const SHUFFLE: u64 = 0x5F1;
    pub const DROPOUT: u64 = 0xD0F;
    pub const INIT: u64 = 0x1A1;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(seed: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(seed), |k, &p| splitmix64(k ^ splitmix64(p)))
}

pub fn stream(seed: u64, path: &[u64]) -> Rng {
    Rng::seed_from_u64(derive_seed(seed, path))
}
