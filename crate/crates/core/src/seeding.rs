use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Independent RNG stream `stream` under the root `seed`.
pub fn rng_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Sub-seed for a named purpose, derived from the single root seed.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    rng_stream(seed, stream).next_u64()
}

/// Stream ids used by the trainer.
pub mod streams {
    pub const INIT_MODEL_O: u64 = 1;
    pub const INIT_MODEL_C: u64 = 2;
    pub const BATCHES: u64 = 3;
    pub const CODE_SWITCH: u64 = 4;
    pub const DROPOUT: u64 = 5;
}
