//! Seeded random streams.
//!
//! Every generator is ChaCha8 (`rand_chacha`), seeded with
//! `ChaCha8Rng::seed_from_u64(seed)` and then moved to a stream id chosen by
//! purpose, so data generation and fold shuffling under the same seed never
//! share keystream. Monte Carlo replication `r` uses seed `seed + r`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// What a random stream is used for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Data = 0,
    Folds = 1,
    Scores = 2,
}

pub fn stream_rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

/// Seed of Monte Carlo replication `r`.
pub fn replication_seed(seed: u64, r: usize) -> u64 {
    seed.wrapping_add(r as u64)
}
