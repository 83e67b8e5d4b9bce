//! Streaming moments with normal-approximation confidence intervals.

use serde::{Deserialize, Serialize};

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.959963984540054;

/// Online mean and central moments up to the fourth order.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    n: u64,
    mean: f64,
    m2: f64,
    m3: f64,
    m4: f64,
}

impl Moments {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, x: f64) {
        let n1 = self.n as f64;
        self.n += 1;
        let n = self.n as f64;
        let delta = x - self.mean;
        let dn = delta / n;
        let dn2 = dn * dn;
        let term1 = delta * dn * n1;
        self.mean += dn;
        self.m4 += term1 * dn2 * (n * n - 3.0 * n + 3.0) + 6.0 * dn2 * self.m2 - 4.0 * dn * self.m3;
        self.m3 += term1 * dn * (n - 2.0) - 3.0 * dn * self.m2;
        self.m2 += term1;
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn mean(&self) -> f64 {
        if self.n == 0 { f64::NAN } else { self.mean }
    }

    /// Unbiased sample variance.
    pub fn variance(&self) -> f64 {
        if self.n < 2 { f64::NAN } else { self.m2 / (self.n as f64 - 1.0) }
    }

    /// 95% half-width for the mean.
    pub fn mean_ci(&self) -> f64 {
        if self.n < 2 {
            return f64::NAN;
        }
        Z95 * (self.variance() / self.n as f64).sqrt()
    }

    /// 95% half-width for the variance, from `Var(s²) ≈ (μ₄ − σ⁴)/n`.
    pub fn variance_ci(&self) -> f64 {
        if self.n < 2 {
            return f64::NAN;
        }
        let n = self.n as f64;
        let s2 = self.m2 / n;
        let mu4 = self.m4 / n;
        Z95 * ((mu4 - s2 * s2).max(0.0) / n).sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(1e-300)
    }

    #[test]
    fn streamed_matches_batch() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let xs: Vec<f64> = (0..100).map(|_| rng.random::<f64>().powi(3) * 7.0 + 3.0).collect();
        let mut m = Moments::new();
        xs.iter().for_each(|&x| m.push(x));

        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let c = |p: i32| xs.iter().map(|x| (x - mean).powi(p)).sum::<f64>();
        assert!(rel(m.mean(), mean) < 1e-12);
        assert!(rel(m.variance(), c(2) / (n - 1.0)) < 1e-12);
        assert!(rel(m.m3, c(3)) < 1e-10);
        assert!(rel(m.m4, c(4)) < 1e-12);
        assert!(rel(m.mean_ci(), Z95 * (c(2) / (n - 1.0) / n).sqrt()) < 1e-12);
    }

    #[test]
    fn degenerate_counts() {
        let mut m = Moments::new();
        assert!(m.mean().is_nan());
        m.push(2.0);
        assert_eq!(m.mean(), 2.0);
        assert!(m.variance().is_nan());
        m.push(2.0);
        assert_eq!(m.variance(), 0.0);
        assert_eq!(m.mean_ci(), 0.0);
    }
}
