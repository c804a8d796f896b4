//! Named random streams derived from one root seed.
//!
//! Every consumer of randomness (context generation, choice sampling, the
//! policy, ground-truth initialization) draws from its own ChaCha stream, so
//! extra draws in one consumer never shift the others.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Truth = 1,
    Contexts = 2,
    Choices = 3,
    Policy = 4,
    Init = 5,
    Audit = 6,
}

pub fn stream(seed: u64, which: Stream) -> StreamRng {
    substream(seed, which, 0)
}

/// Like [`stream`] but with an extra index, e.g. one stream per restart.
pub fn substream(seed: u64, which: Stream, index: u32) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((which as u64) << 32) | index as u64);
    rng
}
