//! Counter-based random streams.
//!
//! Every random quantity is drawn from a ChaCha8 stream addressed by
//! `(seed, stream id, block)`. Work is split into fixed-size blocks, so the
//! values produced never depend on how blocks are scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

/// Rows per block when generating in parallel.
pub const BLOCK_SIZE: usize = 4096;

/// Stream identifiers. Ids below 1024 are reserved; per-column generator
/// streams start at `COLUMN_BASE`.
pub mod streams {
    pub const BOOTSTRAP: u64 = 1;
    pub const FOLDS: u64 = 2;
    pub const TREATMENT: u64 = 3;
    pub const OUTCOME_NOISE: u64 = 4;
    pub const LATENT: u64 = 5;
    pub const ORACLE: u64 = 6;
    pub const COLUMN_BASE: u64 = 1024;
    pub const INSTRUMENT_BASE: u64 = 2048;
}

/// Generator for block `block` of stream `stream_id` under `seed`.
pub fn stream(seed: u64, stream_id: u64, block: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((stream_id << 32) | (block & 0xffff_ffff));
    rng
}

/// Fills `n` values, one block per generator, in parallel.
pub fn fill_blocks<T, F>(n: usize, seed: u64, stream_id: u64, draw: F) -> Vec<T>
where
    T: Send,
    F: Fn(&mut ChaCha8Rng) -> T + Sync,
{
    let blocks = n.div_ceil(BLOCK_SIZE);
    let parts: Vec<Vec<T>> = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let mut rng = stream(seed, stream_id, b as u64);
            let len = BLOCK_SIZE.min(n - b * BLOCK_SIZE);
            (0..len).map(|_| draw(&mut rng)).collect()
        })
        .collect();
    parts.into_iter().flatten().collect()
}
