//! Seeded, splittable random streams.
//!
//! Every stochastic routine takes an explicit generator. Parallel loops derive
//! one stream per work item with [`stream`], so results do not depend on the
//! thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Generator for `seed`, stream 0.
pub fn seeded(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent stream `id` under `seed`.
pub fn stream(seed: u64, id: u64) -> Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(id);
    r
}
