//! Seed derivation for independent, schedule-free RNG streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Mixes a base seed with a sequence of stream keys.
pub fn derive_seed(seed: u64, keys: &[u64]) -> u64 {
    keys.iter()
        .fold(splitmix64(seed), |acc, &k| splitmix64(acc ^ splitmix64(k)))
}

pub fn stream(seed: u64, keys: &[u64]) -> StreamRng {
    StreamRng::seed_from_u64(derive_seed(seed, keys))
}

/// Stable 64-bit key for a string (FNV-1a).
pub fn str_key(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01B3)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn streams_differ_by_key_and_repeat_by_seed() {
        let a: u64 = stream(7, &[1]).random();
        let b: u64 = stream(7, &[2]).random();
        let c: u64 = stream(7, &[1]).random();
        assert_ne!(a, b);
        assert_eq!(a, c);
        assert_ne!(derive_seed(1, &[2, 3]), derive_seed(1, &[3, 2]));
    }
}
