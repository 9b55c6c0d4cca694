//! Seeded, stream-split random numbers.
//!
//! Every consumer derives its own generator from `(seed, stream)`, so two
//! components never share state and a run is reproducible from its seeds.

use rand::{Rng as _, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Deterministic generator identified by a seed and a stream id.
#[derive(Debug, Clone)]
pub struct Rng {
    inner: ChaCha8Rng,
    stream: u64,
    spare_normal: Option<f64>,
}

impl Rng {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Rng {
            inner,
            stream,
            spare_normal: None,
        }
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    /// Uniform integer in `[0, n)`.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    /// Standard normal draw via the Box–Muller transform.
    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        // 1 - u keeps the log argument in (0, 1].
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let angle = 2.0 * std::f64::consts::PI * u2;
        self.spare_normal = Some(r * angle.sin());
        r * angle.cos()
    }

    /// `k` distinct indices from `0..n`, returned in ascending order.
    pub fn subset(&mut self, n: usize, k: usize) -> Vec<usize> {
        let mut picked = rand::seq::index::sample(&mut self.inner, n, k.min(n)).into_vec();
        picked.sort_unstable();
        picked
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }
}
