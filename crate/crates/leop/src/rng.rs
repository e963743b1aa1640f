//! Deterministic random streams.
//!
//! Every stochastic operation in the crate draws from a `ChaCha20Rng`
//! derived from a `(seed, stream)` pair, so results are independent of
//! thread scheduling: samples, epochs, and complexes each get their own
//! stream and can be evaluated in any order or in parallel.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

/// Build the RNG for a given seed and stream index.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// One standard-normal draw via Box-Muller.
///
/// Consumes exactly two uniform draws, which keeps replay deterministic.
pub fn standard_normal<R: Rng>(rng: &mut R) -> f64 {
    let u1: f64 = 1.0 - rng.gen::<f64>(); // (0, 1], keeps ln finite
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Poisson draw by Knuth's product-of-uniforms method.
///
/// Fine for the small rates used here (lambda <= ~10).
pub fn poisson<R: Rng>(rng: &mut R, lambda: f64) -> u64 {
    let limit = (-lambda).exp();
    let mut k = 0u64;
    let mut p = 1.0;
    loop {
        p *= rng.gen::<f64>();
        if p <= limit {
            return k;
        }
        k += 1;
    }
}

/// Uniform draw from an inclusive integer range.
pub fn uniform_range<R: Rng>(rng: &mut R, lo: usize, hi: usize) -> usize {
    if lo >= hi {
        return lo;
    }
    rng.gen_range(lo..=hi)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_are_independent_and_deterministic() {
        let a: Vec<f64> = {
            let mut r = stream_rng(7, 0);
            (0..4).map(|_| r.gen()).collect()
        };
        let a2: Vec<f64> = {
            let mut r = stream_rng(7, 0);
            (0..4).map(|_| r.gen()).collect()
        };
        let b: Vec<f64> = {
            let mut r = stream_rng(7, 1);
            (0..4).map(|_| r.gen()).collect()
        };
        assert_eq!(a, a2);
        assert_ne!(a, b);
    }

    #[test]
    fn normal_moments() {
        let mut rng = stream_rng(11, 0);
        let n = 100_000;
        let draws: Vec<f64> = (0..n).map(|_| standard_normal(&mut rng)).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
        // 3 standard errors
        assert!(mean.abs() < 3.0 / (n as f64).sqrt(), "mean {mean}");
        assert!((var - 1.0).abs() < 3.0 * (2.0f64 / n as f64).sqrt(), "var {var}");
    }

    #[test]
    fn poisson_mean() {
        let mut rng = stream_rng(13, 0);
        let n = 50_000;
        let total: u64 = (0..n).map(|_| poisson(&mut rng, 2.0)).sum();
        let mean = total as f64 / n as f64;
        assert!((mean - 2.0).abs() < 0.05, "mean {mean}");
    }
}
