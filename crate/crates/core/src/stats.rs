//! Summary statistics and confidence bands used by the Monte Carlo checks.

use serde::Serialize;

use crate::sum::compensated_sum;

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    compensated_sum(xs.iter().copied()) / xs.len() as f64
}

/// Unbiased sample standard deviation.
pub fn sample_sd(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return f64::NAN;
    }
    let m = mean(xs);
    (compensated_sum(xs.iter().map(|x| (x - m) * (x - m))) / (xs.len() - 1) as f64).sqrt()
}

pub fn std_error(xs: &[f64]) -> f64 {
    sample_sd(xs) / (xs.len() as f64).sqrt()
}

/// Median with the midpoint convention for even lengths; NaN when empty.
pub fn median(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// A `z`-sigma band around an expected frequency.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Band {
    pub expected: f64,
    pub observed: f64,
    pub sigma: f64,
    pub z: f64,
}

impl Band {
    /// Frequency `hits / trials` against a Bernoulli(`p`) expectation.
    pub fn binomial(hits: u64, trials: u64, p: f64, z: f64) -> Self {
        let n = trials as f64;
        Self { expected: p, observed: hits as f64 / n, sigma: (p * (1.0 - p) / n).sqrt(), z }
    }

    /// Sample mean against `expected`, using the sample's own standard error.
    pub fn sample_mean(xs: &[f64], expected: f64, z: f64) -> Self {
        Self { expected, observed: mean(xs), sigma: std_error(xs), z }
    }

    pub fn deviation_sigmas(&self) -> f64 {
        (self.observed - self.expected).abs() / self.sigma
    }

    pub fn contains(&self) -> bool {
        (self.observed - self.expected).abs() <= self.z * self.sigma
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn basics() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(mean(&xs), 2.5);
        assert!((sample_sd(&xs) - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(median(&xs), 2.5);
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert!(median(&[]).is_nan());
    }

    #[test]
    fn bands() {
        let b = Band::binomial(520, 1000, 0.5, 3.0);
        assert!(b.contains());
        assert!((b.deviation_sigmas() - 0.02 / (0.25f64 / 1000.0).sqrt()).abs() < 1e-12);
        assert!(!Band::binomial(600, 1000, 0.5, 3.0).contains());
    }
}
