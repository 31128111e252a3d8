//! Seeded, splittable random streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Independent stream `task` of the generator seeded with `seed`.
///
/// Results depend only on `(seed, task)`, never on thread scheduling.
pub fn task_rng(seed: u64, task: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(task);
    rng
}
