//! Seeded, addressable random streams.
//!
//! Every consumer of randomness in a chain gets its own ChaCha stream keyed
//! by `(seed, epoch)` and selected by a stream id. Individual `n` uses stream
//! `n + 1`; the population layers use [`POPULATION_STREAM`]. Draws therefore
//! do not depend on how individuals are scheduled across worker threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type ChainRng = ChaCha8Rng;

pub const POPULATION_STREAM: u64 = 0;
/// Stream used for common-random-number CEL evaluation.
pub const EVALUATION_STREAM: u64 = u64::MAX;
/// Stream used by dataset splitting and synthetic generation.
pub const DATA_STREAM: u64 = u64::MAX - 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RngStream {
    pub seed: u64,
    pub stream: u64,
}

impl RngStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        RngStream { seed, stream }
    }

    pub fn individual(seed: u64, index: usize) -> Self {
        RngStream::new(seed, index as u64 + 1)
    }

    /// Generator for one epoch of this stream.
    pub fn at(&self, epoch: u64) -> ChainRng {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&self.seed.to_le_bytes());
        key[8..16].copy_from_slice(&epoch.to_le_bytes());
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream(self.stream);
        rng
    }

    /// Generator that does not depend on an epoch.
    pub fn rng(&self) -> ChainRng {
        self.at(u64::MAX)
    }
}
