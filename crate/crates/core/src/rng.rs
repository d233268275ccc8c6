//! Seeded randomness. Every traffic source owns an independent ChaCha8 stream
//! selected by `(master seed, source id)`, so adding a source never perturbs
//! the draws of another.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::time::SimDuration;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RngError {
    #[error("invalid range: lo {lo} > hi {hi}")]
    InvalidRange { lo: SimDuration, hi: SimDuration },
}

#[derive(Debug, Clone)]
pub struct SimRng {
    seed: u64,
    stream: u64,
    inner: ChaCha8Rng,
}

impl SimRng {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        SimRng {
            seed,
            stream,
            inner,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    /// Uniform over whole nanoseconds in `[lo, hi]`, both ends inclusive.
    pub fn uniform_draw(
        &mut self,
        lo: SimDuration,
        hi: SimDuration,
    ) -> Result<SimDuration, RngError> {
        if lo > hi {
            return Err(RngError::InvalidRange { lo, hi });
        }
        Ok(SimDuration::from_nanos(
            self.inner.random_range(lo.as_nanos()..=hi.as_nanos()),
        ))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.random()
    }
}
