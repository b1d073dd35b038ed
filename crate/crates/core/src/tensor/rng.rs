use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{Real, Tensor};

/// Deterministic random stream backed by ChaCha8.
///
/// Draws are produced in `f64` and rounded to the target precision, so a
/// given seed yields the same stream regardless of tensor precision.
#[derive(Clone, Debug)]
pub struct SeededRng {
    inner: ChaCha8Rng,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        Self {
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Independent child stream, keyed by `stream`.
    pub fn derive(seed: u64, stream: u64) -> Self {
        let mixed = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).rotate_left(17)
            ^ stream.wrapping_mul(0xD1B5_4A32_D192_ED03);
        Self::new(mixed)
    }

    /// Uniform on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn normal(&mut self) -> f64 {
        self.inner.sample::<f64, _>(StandardNormal)
    }

    /// Uniform integer in `[0, n)`.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.random::<u64>()
    }

    pub fn normal_tensor<F: Real>(&mut self, shape: impl Into<Vec<usize>>, std: f64) -> Tensor<F> {
        Tensor::from_fn(shape, |_| F::of(self.normal() * std))
    }

    pub fn uniform_tensor<F: Real>(
        &mut self,
        shape: impl Into<Vec<usize>>,
        lo: f64,
        hi: f64,
    ) -> Tensor<F> {
        Tensor::from_fn(shape, |_| F::of(lo + (hi - lo) * self.uniform()))
    }
}
