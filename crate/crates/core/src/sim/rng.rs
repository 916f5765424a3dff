//! Reproducible random streams.
//!
//! Each replication draws from ChaCha8 keyed by the run seed, with the
//! replication index as the ChaCha stream id, so replications are
//! independent of each other and of evaluation order. Normals use
//! Box–Muller and Poisson counts use sequential inversion.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Largest Poisson mean drawn by a single inversion; larger means are the
/// sum of independent chunks.
const POISSON_CHUNK: f64 = 30.0;

pub struct SimRng {
    inner: ChaCha8Rng,
    spare_normal: Option<f64>,
}

impl SimRng {
    pub fn stream(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        SimRng {
            inner,
            spare_normal: None,
        }
    }

    /// Uniform on the open interval (0, 1) with 53 bits of precision.
    pub fn uniform(&mut self) -> f64 {
        ((self.inner.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    pub fn standard_normal(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        let u1 = self.uniform();
        let u2 = self.uniform();
        let radius = (-2.0 * u1.ln()).sqrt();
        let angle = std::f64::consts::TAU * u2;
        self.spare_normal = Some(radius * angle.sin());
        radius * angle.cos()
    }

    pub fn normal(&mut self, mean: f64, sd: f64) -> f64 {
        mean + sd * self.standard_normal()
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    /// Index drawn with probability proportional to `weights`.
    pub fn categorical(&mut self, weights: &[f64]) -> usize {
        let total: f64 = weights.iter().sum();
        let mut u = self.uniform() * total;
        for (i, w) in weights.iter().enumerate() {
            if u < *w {
                return i;
            }
            u -= w;
        }
        weights.len().saturating_sub(1)
    }

    pub fn poisson(&mut self, mean: f64) -> u64 {
        if mean.is_nan() || mean <= 0.0 {
            return 0;
        }
        let mut remaining = mean;
        let mut total = 0;
        while remaining > 0.0 {
            let chunk = remaining.min(POISSON_CHUNK);
            total += self.poisson_inversion(chunk);
            remaining -= chunk;
        }
        total
    }

    fn poisson_inversion(&mut self, mean: f64) -> u64 {
        let u = self.uniform();
        let mut k = 0u64;
        let mut p = (-mean).exp();
        let mut cdf = p;
        while u > cdf {
            k += 1;
            p *= mean / k as f64;
            cdf += p;
            // Guards against rounding leaving cdf just short of 1.
            if p < 1e-300 && k as f64 > mean {
                break;
            }
        }
        k
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let a: Vec<u64> = {
            let mut r = SimRng::stream(42, 0);
            (0..5).map(|_| r.inner.next_u64()).collect()
        };
        let b: Vec<u64> = {
            let mut r = SimRng::stream(42, 0);
            (0..5).map(|_| r.inner.next_u64()).collect()
        };
        let c: Vec<u64> = {
            let mut r = SimRng::stream(42, 1);
            (0..5).map(|_| r.inner.next_u64()).collect()
        };
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn moments() {
        let mut r = SimRng::stream(1, 0);
        let n = 200_000;
        let xs: Vec<f64> = (0..n).map(|_| r.normal(3.0, 2.0)).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!((mean - 3.0).abs() < 0.03, "{mean}");
        assert!((var - 4.0).abs() < 0.06, "{var}");

        for mu in [0.5, 5.0, 75.0] {
            let ks: Vec<f64> = (0..n).map(|_| r.poisson(mu) as f64).collect();
            let m = ks.iter().sum::<f64>() / n as f64;
            let v = ks.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64;
            let tol = 5.0 * (mu / n as f64).sqrt();
            assert!((m - mu).abs() < tol, "mu {mu} mean {m}");
            assert!((v - mu).abs() < 0.05 * mu, "mu {mu} var {v}");
        }
        assert_eq!(r.poisson(0.0), 0);
    }

    #[test]
    fn uniform_is_open() {
        let mut r = SimRng::stream(9, 3);
        for _ in 0..10_000 {
            let u = r.uniform();
            assert!(u > 0.0 && u < 1.0);
        }
    }
}
