//! Seeded randomness: one ChaCha stream per unit of work, with a documented
//! 64-bit mixer for deriving per-replication seeds. Re-running anything with
//! the same seed and configuration is bit-identical within a build.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

/// Derive the seed for replication `index` from a master seed.
///
/// This is the splitmix64 finalizer applied to `seed + GOLDEN * (index + 1)`:
/// replication streams are independent of `m`, so truncating a run keeps the
/// statistics of the replications that remain.
pub fn mix_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed.wrapping_add(0x9e3779b97f4a7c15u64.wrapping_mul(index.wrapping_add(1)));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// A seeded uniform stream. Samplers draw from the open interval (0, 1) so
/// that inverse-CDF transforms never see 0 or 1.
pub struct SeedStream {
    rng: ChaCha12Rng,
}

impl SeedStream {
    pub fn new(seed: u64) -> Self {
        SeedStream {
            rng: ChaCha12Rng::seed_from_u64(seed),
        }
    }

    /// One uniform draw in (0, 1).
    pub fn uniform(&mut self) -> f64 {
        loop {
            let u: f64 = self.rng.random();
            if u > 0.0 && u < 1.0 {
                return u;
            }
        }
    }

    /// Access to the underlying RNG for non-inverse-CDF draws
    /// (e.g. Poisson counts in the limit-law simulation).
    pub fn rng(&mut self) -> &mut ChaCha12Rng {
        &mut self.rng
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mix_is_stable_and_spread() {
        let a = mix_seed(42, 0);
        let b = mix_seed(42, 1);
        assert_ne!(a, b);
        assert_eq!(a, mix_seed(42, 0));
        // differing master seeds diverge
        assert_ne!(mix_seed(42, 0), mix_seed(43, 0));
    }

    #[test]
    fn stream_is_deterministic() {
        let mut s1 = SeedStream::new(7);
        let mut s2 = SeedStream::new(7);
        for _ in 0..100 {
            assert_eq!(s1.uniform(), s2.uniform());
        }
    }
}
