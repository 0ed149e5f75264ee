//! Seeded random streams.
//!
//! A run seed expands into independent xoshiro256++ streams, one per
//! consumer, by applying the generator's jump function. Changing how much
//! randomness one consumer draws (say, a different batch size changes the
//! shuffle draws) never perturbs another consumer's stream.

use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;

pub type Rng = Xoshiro256PlusPlus;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Init = 0,
    Shuffle = 1,
    Dropout = 2,
    Data = 3,
    Bench = 4,
}

pub fn stream(seed: u64, which: Stream) -> Rng {
    let mut rng = Rng::seed_from_u64(seed);
    for _ in 0..which as u8 {
        rng.jump();
    }
    rng
}
