//! Counter-based random streams.
//!
//! Every random draw in a run comes from a stream keyed by a base seed and a
//! three-component path `(t, i, j)`: step `t`, perturbation `i`, rollout `j`.
//! The key is used directly as a ChaCha8 key, so a stream depends only on
//! `(seed, path, domain)` and never on the order in which tasks execute.
//!
//! Gaussian draws use the ziggurat sampler of `rand_distr` (fixed tables),
//! pinned through the workspace manifest.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Stream domains keep unrelated consumers of the same base seed apart.
pub mod domain {
    /// Perturbations and rollouts of the optimizer/estimator.
    pub const TRAINING: u64 = 0;
    /// Problem construction (e.g. drawing the optimal parameters).
    pub const PROBLEM: u64 = 1;
    /// Monte Carlo smoothing oracles.
    pub const ORACLE: u64 = 2;
    /// Probe point sampling in theory checks.
    pub const PROBE: u64 = 3;
    /// Evaluation points and measurements drawn by experiment drivers.
    pub const HARNESS: u64 = 4;
}

/// Lanes split a rollout stream into independent sub-streams, one per
/// wrapper that needs its own randomness.
pub mod lane {
    pub const NOISE_FEATURES: u64 = 1;
    pub const REWARD_MASK: u64 = 2;
}

/// Identity of a stream: everything needed to rebuild it bit-for-bit.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct StreamKey {
    pub seed: u64,
    pub path: [u64; 3],
    pub domain: u64,
}

impl StreamKey {
    fn chacha_key(&self) -> [u8; 32] {
        let mut bytes = [0u8; 32];
        bytes[..8].copy_from_slice(&self.seed.to_le_bytes());
        for (slot, word) in bytes[8..].chunks_exact_mut(8).zip(self.path) {
            slot.copy_from_slice(&word.to_le_bytes());
        }
        bytes
    }
}

/// A deterministic random stream derived from a [`StreamKey`].
#[derive(Clone, Debug)]
pub struct RngStream {
    key: StreamKey,
    inner: ChaCha8Rng,
}

/// Derives the training-domain stream for `path = [t, i, j]`.
pub fn derive_stream(base_seed: u64, path: [u64; 3]) -> RngStream {
    RngStream::from_key(StreamKey {
        seed: base_seed,
        path,
        domain: domain::TRAINING,
    })
}

impl RngStream {
    pub fn from_key(key: StreamKey) -> Self {
        let mut inner = ChaCha8Rng::from_seed(key.chacha_key());
        inner.set_stream(key.domain);
        Self { key, inner }
    }

    /// Stream in an explicit domain.
    pub fn in_domain(domain: u64, seed: u64, path: [u64; 3]) -> Self {
        Self::from_key(StreamKey { seed, path, domain })
    }

    pub fn key(&self) -> StreamKey {
        self.key
    }

    /// Independent sub-stream for `(lane, index)`. Pure in the key: calling it
    /// twice gives the same sub-stream regardless of how much of `self` has
    /// been consumed.
    pub fn split(&self, lane: u64, index: u64) -> RngStream {
        let mut inner = ChaCha8Rng::from_seed(self.key.chacha_key());
        inner.set_stream(self.key.domain ^ (lane << 32));
        inner.set_word_pos((index as u128) << 40);
        RngStream {
            key: self.key,
            inner,
        }
    }

    #[inline]
    pub fn standard_normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    pub fn fill_standard_normal(&mut self, out: &mut [f64]) {
        for v in out {
            *v = self.inner.sample(StandardNormal);
        }
    }

    /// Uniform draw in `[0, 1)`.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn below(&mut self, bound: usize) -> usize {
        self.inner.random_range(0..bound)
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn draws(mut s: RngStream, n: usize) -> Vec<f64> {
        (0..n).map(|_| s.standard_normal()).collect()
    }

    #[test]
    fn same_key_same_draws() {
        let a = draws(derive_stream(42, [3, 1, 4]), 100);
        let b = draws(derive_stream(42, [3, 1, 4]), 100);
        assert_eq!(
            a.iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
            b.iter().map(|x| x.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn distinct_paths_differ() {
        let a = draws(derive_stream(42, [0, 0, 0]), 100);
        let b = draws(derive_stream(42, [0, 0, 1]), 100);
        assert_ne!(a, b);
        let c = draws(RngStream::in_domain(domain::ORACLE, 42, [0, 0, 0]), 100);
        assert_ne!(a, c);
    }

    #[test]
    fn normal_moments() {
        // CLT: mean SE = 1/sqrt(n) = 0.01, allow 4 SE. Variance within 10%.
        let n = 10_000;
        let x = draws(derive_stream(7, [0, 0, 0]), n);
        let mean = x.iter().sum::<f64>() / n as f64;
        let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!(mean.abs() <= 4.0 / (n as f64).sqrt(), "mean {mean}");
        assert!((var - 1.0).abs() <= 0.1, "var {var}");
    }

    #[test]
    fn split_is_pure_and_independent() {
        let mut s = derive_stream(1, [2, 3, 4]);
        let before = draws(s.split(lane::NOISE_FEATURES, 5), 20);
        let _ = s.standard_normal();
        let after = draws(s.split(lane::NOISE_FEATURES, 5), 20);
        assert_eq!(before, after);
        assert_ne!(before, draws(s.split(lane::NOISE_FEATURES, 6), 20));
        assert_ne!(before, draws(s.split(lane::REWARD_MASK, 5), 20));
        assert_ne!(before, draws(derive_stream(1, [2, 3, 4]), 20));
    }

    #[test]
    fn pairwise_streams_uncorrelated() {
        // Sample correlation of two independent N(0,1) sequences has SE 1/sqrt(n).
        let n = 10_000;
        let a = draws(derive_stream(9, [0, 0, 1]), n);
        let b = draws(derive_stream(9, [0, 0, 2]), n);
        let corr = a.iter().zip(&b).map(|(x, y)| x * y).sum::<f64>() / n as f64;
        assert!(corr.abs() < 4.0 / (n as f64).sqrt(), "corr {corr}");
    }
}
