//! Deterministic per-trial random streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// FNV-1a, so scenario seeds depend on the scenario's name, not its
/// position in a matrix.
pub fn hash_str(s: &str) -> u64 {
    s.bytes()
        .fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

pub fn mix(parts: &[u64]) -> u64 {
    parts.iter().fold(0u64, |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

pub fn trial_seed(master: u64, scenario: &str, trial: u64) -> u64 {
    mix(&[master, hash_str(scenario), trial])
}

/// Independent sub-streams of one seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Init = 1,
    Channel = 2,
    Noise = 3,
    Monitor = 4,
    Burst = 5,
    Warmup = 6,
}

pub fn stream(seed: u64, s: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(s as u64);
    rng
}
