//! Deterministic seed derivation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub(crate) fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for stream `id` under `master`, independent of generation order.
pub fn derive_seed(master: u64, id: u64) -> u64 {
    splitmix(splitmix(master) ^ id.wrapping_mul(0xD1B5_4A32_D192_ED03))
}

/// Seed for a named stream (e.g. one parameter tensor).
pub fn name_seed(master: u64, name: &str) -> u64 {
    // FNV-1a
    let h = name
        .bytes()
        .fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3));
    derive_seed(master, h)
}

pub fn stream(master: u64, id: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, id))
}
