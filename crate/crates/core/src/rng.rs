//! Per-trajectory random streams.
//!
//! Every trajectory owns a Xoshiro256++ generator whose seed is a
//! SplitMix64 hash of the run seed and the trajectory's index tuple, so a
//! trajectory's draws do not depend on how work is split across threads.

use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;

pub type TrajectoryRng = Xoshiro256PlusPlus;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn stream_seed(seed: u64, indices: &[u64]) -> u64 {
    indices.iter().fold(splitmix64(seed), |h, &i| splitmix64(h ^ splitmix64(i.wrapping_add(0x632B_E59B_D9B4_E019))))
}

pub fn stream(seed: u64, indices: &[u64]) -> TrajectoryRng {
    TrajectoryRng::seed_from_u64(stream_seed(seed, indices))
}
