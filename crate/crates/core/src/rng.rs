//! Block-seeded random streams.
//!
//! Sample index space is cut into fixed blocks of [`BLOCK_LEN`] samples and
//! block `b` always draws from ChaCha8 stream `b` under the run seed. Work
//! can then be split across any number of partitions at block boundaries
//! and the merged result never depends on the partition count.

use std::ops::Range;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

pub const BLOCK_LEN: u64 = 1 << 16;

pub fn block_rng(seed: u64, block: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(block);
    rng
}

/// Sample range covered by block `b` when `n` samples are drawn in total.
pub fn block_range(n: u64, b: u64) -> Range<u64> {
    let start = b * BLOCK_LEN;
    start..(start + BLOCK_LEN).min(n)
}

pub fn block_count(n: u64) -> u64 {
    n.div_ceil(BLOCK_LEN)
}

/// Splits `0..block_count(n)` into `partitions` contiguous block ranges.
pub fn partition_blocks(n: u64, partitions: usize) -> Vec<Range<u64>> {
    let blocks = block_count(n);
    let parts = (partitions.max(1) as u64).min(blocks.max(1));
    let base = blocks / parts;
    let extra = blocks % parts;
    let mut out = Vec::with_capacity(parts as usize);
    let mut start = 0;
    for p in 0..parts {
        let len = base + u64::from(p < extra);
        out.push(start..start + len);
        start += len;
    }
    out
}

/// Runs `work(rng, sample_range)` for every block, grouped into `partitions`
/// parallel workers, and folds the per-block results with `merge` in block
/// order.
pub fn run_partitioned<T, W, M>(n: u64, seed: u64, partitions: usize, work: W, merge: M) -> T
where
    T: Default + Send,
    W: Fn(&mut ChaCha8Rng, Range<u64>) -> T + Sync,
    M: Fn(T, T) -> T + Sync + Send,
{
    let parts = partition_blocks(n, partitions);
    let partials: Vec<T> = parts
        .into_par_iter()
        .map(|blocks| {
            blocks.fold(T::default(), |acc, b| {
                let mut rng = block_rng(seed, b);
                merge(acc, work(&mut rng, block_range(n, b)))
            })
        })
        .collect();
    partials.into_iter().fold(T::default(), &merge)
}
