//! Seeded random streams. Every consumer of randomness draws from its own
//! ChaCha stream derived from the single run seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    VisitOrder = 1,
    NoisyOracle = 2,
    Planted = 3,
    Knapsack = 4,
    Calibration = 5,
}

pub fn stream_rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}
