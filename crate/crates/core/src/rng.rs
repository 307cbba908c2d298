//! Seed handling.
//!
//! Every random stream is derived from one 64-bit seed plus a stream id, so
//! independent consumers (agents, seeds, instance generators) never share
//! state and every run is bit-reproducible. ChaCha is counter based, and its
//! 64-bit stream selector gives the splitting for free.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Well-known stream ids so unrelated consumers of the same seed stay apart.
pub mod stream {
    pub const MDP: u64 = 1;
    pub const POLICY: u64 = 2;
    pub const CRITIC: u64 = 3;
    pub const AGENT: u64 = 4;
    pub const BATCH: u64 = 5;
    pub const INIT: u64 = 6;
}

pub fn rng_for(seed: u64, stream: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
