//! Seeded random streams.
//!
//! Every stochastic operation takes its generator explicitly. Parallel or
//! repeated work derives an independent stream from `(seed, indices...)` so
//! results never depend on evaluation order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The generator used throughout the crate. ChaCha8 output is stable across
/// platforms and crate versions, which the determinism guarantees rely on.
pub type Rng = ChaCha8Rng;

pub fn seeded(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}

/// Derive a stream for a sub-task identified by `path`.
pub fn derive(seed: u64, path: &[u64]) -> Rng {
    let mut h = splitmix(seed ^ 0x6a09_e667_f3bc_c908);
    for &p in path {
        h = splitmix(h ^ splitmix(p.wrapping_add(0x9e37_79b9_7f4a_7c15)));
    }
    Rng::seed_from_u64(h)
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng as _;

    #[test]
    fn derived_streams_are_reproducible_and_distinct() {
        let a: u64 = derive(7, &[1, 2]).random();
        let b: u64 = derive(7, &[1, 2]).random();
        let c: u64 = derive(7, &[2, 1]).random();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }
}
