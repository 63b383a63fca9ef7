use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Deterministic random number generator keyed by a 64-bit seed.
///
/// Every stochastic operation in the library draws from an explicit `Rng`
/// handle, so a run is fully reproducible from its seed. `split` derives an
/// independent stream, useful for decoupling initialization from sampling.
#[derive(Clone, Debug)]
pub struct Rng(ChaCha8Rng);

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng(ChaCha8Rng::seed_from_u64(seed))
    }

    /// Derives an independent generator from this one.
    pub fn split(&mut self) -> Self {
        Rng(ChaCha8Rng::seed_from_u64(self.0.random::<u64>()))
    }

    /// Standard normal draw.
    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.0)
    }

    /// Uniform draw in `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        if lo == hi {
            return lo;
        }
        self.0.random_range(lo..hi)
    }

    /// Uniform integer in `[lo, hi]` (inclusive).
    pub fn int_range(&mut self, lo: i64, hi: i64) -> i64 {
        debug_assert!(lo <= hi);
        self.0.random_range(lo..=hi)
    }
}
