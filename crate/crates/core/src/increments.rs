//! Reproducible Brownian increment streams.
//!
//! Each path owns one stream, keyed by `(master_seed, path_index)` through a
//! counter-mode generator (ChaCha8 with the path index as the stream id), so
//! paths are independent, order-independent and parallel-safe. Normal draws
//! use a Box–Muller transform with a fixed consumption of two 64-bit words
//! per draw, which makes the k-th increment a pure function of
//! `(master_seed, path_index, level_dt, k)`.
//!
//! Coarse-level streams for coupled two-level experiments are **derived** from
//! a fine stream by summing groups of fine increments — never re-sampled — so
//! a coarse increment equals the sum of its fine constituents bit for bit.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Generator identifier recorded in output metadata for reproducibility.
pub const RNG_ALGORITHM: &str = "chacha8-boxmuller";

/// A lazily generated sequence of Gaussian increments `dW ~ N(0, level_dt)`.
#[derive(Debug, Clone)]
pub struct IncrementStream {
    master_seed: u64,
    path_index: u64,
    base_dt: f64,
    sqrt_base_dt: f64,
    group: u64,
    rng: ChaCha8Rng,
    emitted: u64,
}

impl IncrementStream {
    /// Stream of increments with variance `dt` for one path.
    pub fn new(master_seed: u64, path_index: u64, dt: f64) -> Self {
        assert!(dt > 0.0 && dt.is_finite(), "dt must be positive, got {dt}");
        let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
        rng.set_stream(path_index);
        Self {
            master_seed,
            path_index,
            base_dt: dt,
            sqrt_base_dt: dt.sqrt(),
            group: 1,
            rng,
            emitted: 0,
        }
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn path_index(&self) -> u64 {
        self.path_index
    }

    /// Variance of one emitted increment.
    pub fn level_dt(&self) -> f64 {
        self.base_dt * self.group as f64
    }

    /// Number of increments emitted so far.
    pub fn position(&self) -> u64 {
        self.emitted
    }

    /// Next increment: a sum of `group` base draws of variance `base_dt`.
    pub fn next_increment(&mut self) -> f64 {
        let mut sum = 0.0;
        for _ in 0..self.group {
            sum += self.sqrt_base_dt * standard_normal(&mut self.rng);
        }
        self.emitted += 1;
        sum
    }

    /// Derives the stream at step `m * level_dt` whose increments are sums of
    /// `m` consecutive increments of `self`. The stream must be fresh so that
    /// coarse steps align with fine-step boundaries.
    pub fn coarsen(mut self, m: u64) -> Self {
        assert!(m >= 2, "coarsening factor must be >= 2, got {m}");
        assert_eq!(
            self.emitted, 0,
            "cannot coarsen a stream that has already emitted increments"
        );
        self.group *= m;
        self
    }
}

/// Free-function form of [`IncrementStream::coarsen`].
pub fn coupled_increments(stream: IncrementStream, m: u64) -> IncrementStream {
    stream.coarsen(m)
}

/// Standard normal draw by Box–Muller; consumes exactly two 64-bit words.
fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1 = unit_open(rng.next_u64());
    let u2 = unit_open(rng.next_u64());
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Maps a 64-bit word to the half-open interval `(0, 1]`, keeping `ln` finite.
fn unit_open(word: u64) -> f64 {
    ((word >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_are_reproducible() {
        let a: Vec<f64> = (0..64)
            .scan(IncrementStream::new(7, 3, 0.25), |s, _| {
                Some(s.next_increment())
            })
            .collect();
        let b: Vec<f64> = (0..64)
            .scan(IncrementStream::new(7, 3, 0.25), |s, _| {
                Some(s.next_increment())
            })
            .collect();
        assert_eq!(a, b);
    }

    #[test]
    fn distinct_paths_give_distinct_streams() {
        let mut a = IncrementStream::new(7, 0, 0.25);
        let mut b = IncrementStream::new(7, 1, 0.25);
        let differs = (0..16).any(|_| a.next_increment() != b.next_increment());
        assert!(differs);
    }

    #[test]
    fn coarse_increments_are_exact_sums() {
        let mut fine = IncrementStream::new(99, 5, 0.125);
        let mut coarse = IncrementStream::new(99, 5, 0.125).coarsen(4);
        assert_eq!(coarse.level_dt(), 0.5);
        for _ in 0..32 {
            let sum = (0..4).map(|_| fine.next_increment()).sum::<f64>();
            assert_eq!(sum.to_bits(), coarse.next_increment().to_bits());
        }
    }

    #[test]
    fn pair_coarsening_of_four_values() {
        let mut fine = IncrementStream::new(1, 0, 1.0);
        let (a, b, c, d) = (
            fine.next_increment(),
            fine.next_increment(),
            fine.next_increment(),
            fine.next_increment(),
        );
        let mut coarse = IncrementStream::new(1, 0, 1.0).coarsen(2);
        assert_eq!(coarse.next_increment(), a + b);
        assert_eq!(coarse.next_increment(), c + d);
    }

    #[test]
    #[should_panic(expected = "already emitted")]
    fn coarsening_started_stream_panics() {
        let mut s = IncrementStream::new(1, 0, 1.0);
        s.next_increment();
        let _ = s.coarsen(2);
    }

    #[test]
    fn moments_match_gaussian_law() {
        // Coarse increments over [t, t + m dt] must have variance m dt; checked
        // against the sample variance within three standard errors.
        let dt = 0.01;
        let m = 8u64;
        let n = 1_000_000usize;
        let mut stream = IncrementStream::new(2024, 0, dt).coarsen(m);
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for _ in 0..n {
            let dw = stream.next_increment();
            sum += dw;
            sum_sq += dw * dw;
        }
        let mean = sum / n as f64;
        let var = sum_sq / n as f64 - mean * mean;
        let target = m as f64 * dt;
        // SE(sample variance) ~ target * sqrt(2/n)
        let se = target * (2.0 / n as f64).sqrt();
        assert!((var - target).abs() < 3.0 * se, "var {var} vs {target}");
        let se_mean = (target / n as f64).sqrt();
        assert!(mean.abs() < 3.0 * se_mean, "mean {mean}");
    }
}
