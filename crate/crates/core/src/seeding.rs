//! Derived-seed scheme shared by the generator and the resampling plan.
//!
//! A derived seed is obtained by folding a sequence of tags into the master
//! seed with the SplitMix64 finalizer:
//!
//! ```text
//! h_0 = splitmix(master)
//! h_k = splitmix(h_{k-1} ^ splitmix(tag_k + GOLDEN))
//! ```
//!
//! The result depends only on the master seed and the tag path, never on the
//! order in which seeds are requested, so work keyed by (fsu, household) or by
//! repetition index can run in any order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

pub(crate) fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Folds `tags` into `master`.
pub fn derive_seed(master: u64, tags: &[u64]) -> u64 {
    tags.iter().fold(splitmix64(master), |h, &t| {
        splitmix64(h ^ splitmix64(t.wrapping_add(GOLDEN)))
    })
}

pub fn rng_for(master: u64, tags: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, tags))
}
