//! Deterministic random streams.
//!
//! A [`SeedKey`] is a `(master, stream)` pair. Each pair maps to an
//! independent ChaCha8 stream, so chain `j` of an experiment can be generated
//! on any worker without changing its output.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Stream index reserved for the training chain.
pub const TRAIN_STREAM: u64 = 0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SeedKey {
    pub master: u64,
    pub stream: u64,
}

impl SeedKey {
    pub fn new(master: u64, stream: u64) -> Self {
        Self { master, stream }
    }

    pub fn train(master: u64) -> Self {
        Self::new(master, TRAIN_STREAM)
    }

    /// Key for test chain `j` (1-based, so it never collides with the
    /// training stream).
    pub fn test(master: u64, j: u64) -> Self {
        Self::new(master, j)
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master);
        rng.set_stream(self.stream);
        rng
    }
}
