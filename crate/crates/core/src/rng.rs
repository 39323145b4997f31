//! Keyed random streams.
//!
//! Every random draw in the crate comes from a ChaCha stream addressed by a
//! `(seed, domain, index...)` key, so trials and links can be generated in any
//! order (or concurrently) and still reproduce bit for bit.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream domains. Keeping them distinct guarantees that, e.g., the channel of
/// trial 3 never shares a stream with the pilots of trial 3.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Domain {
    Channel = 1,
    Pilots = 2,
    Noise = 3,
    Init = 4,
    Trial = 5,
    Schedule = 6,
    Restart = 7,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes a seed with a list of indices into a new 64-bit key.
pub fn derive_seed(seed: u64, keys: &[u64]) -> u64 {
    keys.iter()
        .fold(splitmix(seed), |acc, &k| splitmix(acc ^ splitmix(k)))
}

/// ChaCha8 generator for `(seed, domain, keys)`.
pub fn stream(seed: u64, domain: Domain, keys: &[u64]) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, keys));
    rng.set_stream(domain as u64);
    rng
}
