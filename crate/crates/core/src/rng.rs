//! Seeded random streams.
//!
//! One master seed fans out into independent ChaCha streams, one per
//! pipeline stage, so that a change in how much randomness one stage
//! consumes never shifts the draws seen by another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Named pipeline stages that each own a random stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Init = 1,
    Refine = 2,
    Proposer = 3,
    Shuffle = 4,
    Bench = 5,
    Noise = 6,
    Band = 7,
    Prompting = 8,
}

pub fn stream(seed: u64, which: Stream) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(which as u64);
    rng
}

/// A stream further keyed by an integer, e.g. one per refinement iteration.
pub fn substream(seed: u64, which: Stream, index: u64) -> StreamRng {
    let mixed = seed
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(index.wrapping_mul(0xBF58_476D_1CE4_E5B9));
    let mut rng = ChaCha8Rng::seed_from_u64(mixed);
    rng.set_stream(which as u64);
    rng
}
