//! Seeded random streams.
//!
//! All randomness comes from ChaCha8 (`rand_chacha`), whose output is
//! value-stable across platforms and releases. Independent consumers (a
//! region's sequence, a training batch, a dropout mask) each get their own
//! stream, selected by mixing a list of integer tags into the 64-bit ChaCha
//! stream id, so results never depend on evaluation order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// SplitMix64 finalizer: the standard 64-bit avalanche mix.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Folds tags into one stream id; order matters.
pub fn stream_id(tags: &[u64]) -> u64 {
    tags.iter().fold(0x6E6F_7763_6173_74u64, |acc, &t| mix64(acc ^ mix64(t)))
}

/// FNV-1a, used to turn names (region ids) into tags.
pub fn name_tag(name: &str) -> u64 {
    name.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01B3)
    })
}

pub fn seeded(seed: u64, tags: &[u64]) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream_id(tags));
    rng
}
