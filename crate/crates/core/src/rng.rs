//! Deterministic random streams.
//!
//! Every random draw in the library comes from a `ChaCha8Rng` whose seed is
//! derived from the master seed and a small tuple of coordinates (purpose,
//! epoch, user, ...). Two runs that ask for the same coordinates see the same
//! stream regardless of what else was drawn in between.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Stream = ChaCha8Rng;

/// Stream purposes. The discriminant is mixed into the derived seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Init = 1,
    FoldSplit = 2,
    Shuffle = 3,
    Corruption = 4,
    RatingNegatives = 5,
    TrustNegatives = 6,
    Synthetic = 7,
    Instance = 8,
    Fold = 9,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a 64-bit seed from `master` and a coordinate list.
pub fn derive_seed(master: u64, purpose: Purpose, coords: &[u64]) -> u64 {
    let mut h = splitmix64(master ^ splitmix64(purpose as u64));
    for &c in coords {
        h = splitmix64(h ^ splitmix64(c.wrapping_add(0x5851_F42D_4C95_7F2D)));
    }
    h
}

pub fn stream(master: u64, purpose: Purpose, coords: &[u64]) -> Stream {
    ChaCha8Rng::seed_from_u64(derive_seed(master, purpose, coords))
}
