//! Seeded random streams and the splitting rule used for parallel work.
//!
//! All randomness flows from explicit [`Stream`] handles. Parallel stages never
//! share a stream: an operation draws one `u64` from its caller's stream and
//! then hands chunk `k` the stream `split(that_u64, k)`. Chunk boundaries are
//! fixed sizes, so results do not depend on the number of worker threads.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// The random stream type used throughout the crate.
pub type Stream = ChaCha8Rng;

/// Master stream for a seed (stream id 0).
pub fn master(seed: u64) -> Stream {
    split(seed, 0)
}

/// Independent stream `id` derived from `seed`: ChaCha8 keyed by
/// `seed_from_u64(seed)`, positioned on stream `id`.
pub fn split(seed: u64, id: u64) -> Stream {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Draws a fresh key from `parent` for a family of child streams.
pub fn fork(parent: &mut Stream) -> u64 {
    parent.next_u64()
}

/// Uniform variate in the half-open interval (0, 1].
#[inline]
pub fn open_unit(rng: &mut Stream) -> f64 {
    // 53 random mantissa bits, shifted off zero.
    ((rng.next_u64() >> 11) as f64 + 1.0) * (1.0 / (1u64 << 53) as f64)
}

/// Uniform variate in [0, 1).
#[inline]
pub fn unit(rng: &mut Stream) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Fixed-size chunking of `n` items: returns `(chunk_index, start, len)`.
pub(crate) fn chunks(n: usize, size: usize) -> Vec<(u64, usize, usize)> {
    (0..n.div_ceil(size))
        .map(|c| {
            let start = c * size;
            (c as u64, start, size.min(n - start))
        })
        .collect()
}
