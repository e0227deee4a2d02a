//! Seed derivation.
//!
//! Every random stream is a ChaCha8 generator keyed by a 64-bit seed and
//! positioned on a stream id hashed from a `(label, index)` pair. Streams
//! with distinct labels or indices never overlap, and the mapping is the
//! same on every platform.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use rand_chacha::ChaCha8Rng as StreamRng;

fn stream_id(label: &str, index: u64) -> u64 {
    // FNV-1a over the label bytes followed by the little-endian index.
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut h = OFFSET;
    for b in label.bytes().chain(index.to_le_bytes()) {
        h ^= u64::from(b);
        h = h.wrapping_mul(PRIME);
    }
    h
}

/// Random stream for `(seed, label, index)`.
pub fn stream(seed: u64, label: &str, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream_id(label, index));
    rng
}

/// A child seed, for handing a whole sub-computation its own seed space.
pub fn sub_seed(seed: u64, label: &str, index: u64) -> u64 {
    stream(seed, label, index).next_u64()
}
