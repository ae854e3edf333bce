//! Seed derivation. Every random stream in the simulator is a ChaCha8 generator
//! keyed by a 64-bit seed mixed from the global seed and a stream identity, so
//! results do not depend on scheduling or worker count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream tags keep independent consumers of the same (seed, server, epoch)
/// triple from sharing a generator.
#[derive(Clone, Copy, Debug)]
#[repr(u64)]
pub enum Stream {
    Init = 1,
    Shuffle = 2,
    Partition = 3,
    Data = 4,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Order-sensitive mix of a list of words into one seed.
pub fn derive_seed(parts: &[u64]) -> u64 {
    parts.iter().fold(0x5E_ED0F_D1A5_u64, |acc, &p| {
        splitmix64(acc ^ splitmix64(p))
    })
}

pub fn stream_rng(stream: Stream, parts: &[u64]) -> ChaCha8Rng {
    let mut words = Vec::with_capacity(parts.len() + 1);
    words.push(stream as u64);
    words.extend_from_slice(parts);
    ChaCha8Rng::seed_from_u64(derive_seed(&words))
}
