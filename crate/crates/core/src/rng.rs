//! Pinned randomness.
//!
//! Every random draw in the crate comes from ChaCha8 seeded with
//! `seed_from_u64(seed)` and a per-purpose stream id. Bounded integers and
//! unit floats are derived from raw `next_u64` output here rather than
//! through `rand`'s distribution code, so sampled plans stay identical
//! across platforms and crate upgrades.

use rand::RngCore;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub const STREAM_KMEANS: u64 = 1;
pub const STREAM_SYNTH: u64 = 3;

/// Stream ids for per-source sampling start here, offset by a hash of the id.
const STREAM_SAMPLING_BASE: u64 = 1 << 32;

pub fn stream(seed: u64, stream: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Stream keyed by a dataset id, independent of which other ids are present.
pub fn keyed_stream(seed: u64, key: &str) -> Rng {
    // FNV-1a, 64-bit
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in key.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    stream(seed, STREAM_SAMPLING_BASE ^ h)
}

/// Uniform integer in `[0, n)` via Lemire's multiply-and-reject.
pub fn below(rng: &mut impl RngCore, n: u64) -> u64 {
    assert!(n > 0, "empty range");
    let threshold = n.wrapping_neg() % n;
    loop {
        let m = u128::from(rng.next_u64()) * u128::from(n);
        if (m as u64) >= threshold {
            return (m >> 64) as u64;
        }
    }
}

/// Uniform float in `[0, 1)` with 53 random bits.
pub fn unit(rng: &mut impl RngCore) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}
