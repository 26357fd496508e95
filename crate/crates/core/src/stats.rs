//! Small statistical helpers shared by the detectors, oracles and experiments.

use statrs::distribution::{ChiSquared, ContinuousCDF};
use libm::{erf, erfc};

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Standard normal upper tail `1 - Phi(x)`, accurate for large `x`.
pub fn normal_sf(x: f64) -> f64 {
    0.5 * erfc(x / std::f64::consts::SQRT_2)
}

/// `2 Phi(x) - 1` without cancellation.
pub fn normal_two_sided_mass(x: f64) -> f64 {
    erf(x / std::f64::consts::SQRT_2)
}

/// Mean and standard error of the mean.
pub fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Streaming mean/variance (Welford).
#[derive(Debug, Clone, Copy, Default)]
pub struct RunningMoments {
    n: u64,
    mean: f64,
    m2: f64,
}

impl RunningMoments {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let delta = x - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn merge(&mut self, other: &Self) {
        if other.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = *other;
            return;
        }
        let n = self.n + other.n;
        let delta = other.mean - self.mean;
        self.mean += delta * other.n as f64 / n as f64;
        self.m2 += other.m2 + delta * delta * (self.n as f64 * other.n as f64) / n as f64;
        self.n = n;
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            f64::NAN
        } else {
            self.m2 / (self.n - 1) as f64
        }
    }

    pub fn standard_error(&self) -> f64 {
        (self.variance() / self.n as f64).sqrt()
    }
}

/// One-sample Kolmogorov–Smirnov test. Returns `(D, p_value)` using the
/// asymptotic Kolmogorov law with Stephens' small-sample correction.
pub fn ks_test(samples: &[f64], cdf: impl Fn(f64) -> f64) -> (f64, f64) {
    let mut xs = samples.to_vec();
    xs.sort_by(|a, b| a.total_cmp(b));
    let n = xs.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in xs.iter().enumerate() {
        let f = cdf(x);
        d = d.max(((i + 1) as f64 / n - f).abs()).max((f - i as f64 / n).abs());
    }
    let sqrt_n = n.sqrt();
    (d, kolmogorov_sf((sqrt_n + 0.12 + 0.11 / sqrt_n) * d))
}

/// `P(K > lambda)` for the Kolmogorov distribution.
pub fn kolmogorov_sf(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = 2.0 * (-2.0 * kf * kf * lambda * lambda).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    sum.clamp(0.0, 1.0)
}

/// Pearson goodness of fit. Cells with zero expectation must have zero
/// observations and are skipped. Returns `(statistic, df, p_value)`.
pub fn chi_square_gof(observed: &[u64], expected: &[f64]) -> (f64, usize, f64) {
    let mut stat = 0.0;
    let mut cells = 0usize;
    for (&o, &e) in observed.iter().zip(expected) {
        if e > 0.0 {
            stat += (o as f64 - e).powi(2) / e;
            cells += 1;
        } else if o > 0 {
            return (f64::INFINITY, cells, 0.0);
        }
    }
    let df = cells.saturating_sub(1);
    (stat, df, chi_square_sf(stat, df))
}

/// Two-sample homogeneity test on two count vectors over the same cells.
pub fn chi_square_two_sample(a: &[u64], b: &[u64]) -> (f64, usize, f64) {
    let na: u64 = a.iter().sum();
    let nb: u64 = b.iter().sum();
    let total = (na + nb) as f64;
    let mut stat = 0.0;
    let mut cells = 0usize;
    for (&x, &y) in a.iter().zip(b) {
        let row = (x + y) as f64;
        if row == 0.0 {
            continue;
        }
        cells += 1;
        let ea = row * na as f64 / total;
        let eb = row * nb as f64 / total;
        stat += (x as f64 - ea).powi(2) / ea + (y as f64 - eb).powi(2) / eb;
    }
    let df = cells.saturating_sub(1);
    (stat, df, chi_square_sf(stat, df))
}

pub fn chi_square_sf(stat: f64, df: usize) -> f64 {
    if df == 0 {
        return 1.0;
    }
    ChiSquared::new(df as f64).map(|c| c.sf(stat)).unwrap_or(f64::NAN)
}

/// Wilson score interval for a binomial proportion.
pub fn wilson_interval(successes: u64, trials: u64, z: f64) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    ((center - half).max(0.0), (center + half).min(1.0))
}

/// `sqrt(p (1 - p) / n)`.
pub fn binomial_se(p: f64, trials: u64) -> f64 {
    (p * (1.0 - p) / trials as f64).sqrt()
}

pub const WILSON_Z_95: f64 = 1.959_963_984_540_054;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prob::stream_from_seed;
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn normal_values() {
        assert!((normal_cdf(0.0) - 0.5).abs() < 1e-16);
        assert!((normal_cdf(1.959_963_984_540_054) - 0.975).abs() < 1e-15);
        assert!((normal_sf(10.0) - 7.619_853_024_160_527e-24).abs() < 1e-35);
        assert!((normal_two_sided_mass(0.25) - (2.0 * normal_cdf(0.25) - 1.0)).abs() < 1e-15);
        assert_eq!(normal_two_sided_mass(0.25), 0.197_412_651_365_847_43);
    }

    #[test]
    fn ks_accepts_normal_and_rejects_uniform() {
        let mut rng = stream_from_seed(1);
        let xs: Vec<f64> = (0..20_000).map(|_| StandardNormal.sample(&mut rng)).collect();
        let (_, p) = ks_test(&xs, normal_cdf);
        assert!(p > 1e-3);
        let us: Vec<f64> = (0..20_000).map(|_| rng.random::<f64>()).collect();
        let (_, p) = ks_test(&us, normal_cdf);
        assert!(p < 1e-10);
    }

    #[test]
    fn kolmogorov_reference_points() {
        // Classical critical values: P(K > 1.358) = 0.05, P(K > 1.949) = 0.001.
        assert!((kolmogorov_sf(1.358_099) - 0.05).abs() < 1e-4);
        assert!((kolmogorov_sf(1.949_58) - 0.001).abs() < 1e-5);
    }

    #[test]
    fn chi_square_sanity() {
        let (stat, df, p) = chi_square_gof(&[50, 50], &[50.0, 50.0]);
        assert_eq!((stat, df, p), (0.0, 1, 1.0));
        let (_, _, p) = chi_square_gof(&[90, 10], &[50.0, 50.0]);
        assert!(p < 1e-10);
        let (_, _, p) = chi_square_gof(&[1, 99], &[0.0, 100.0]);
        assert_eq!(p, 0.0);
        let (_, df, p) = chi_square_two_sample(&[10, 20, 0], &[10, 20, 0]);
        assert_eq!((df, p), (1, 1.0));
    }

    #[test]
    fn wilson_contains_estimate() {
        let (lo, hi) = wilson_interval(90, 100, WILSON_Z_95);
        assert!(lo < 0.9 && 0.9 < hi);
        assert!((lo - 0.8256).abs() < 1e-3 && (hi - 0.9448).abs() < 1e-3);
        assert_eq!(wilson_interval(0, 0, WILSON_Z_95), (0.0, 1.0));
    }

    #[test]
    fn running_moments_merge() {
        let xs = [1.0, 2.0, 4.0, 8.0, 16.0];
        let mut all = RunningMoments::default();
        xs.iter().for_each(|&x| all.push(x));
        let mut a = RunningMoments::default();
        let mut b = RunningMoments::default();
        xs[..2].iter().for_each(|&x| a.push(x));
        xs[2..].iter().for_each(|&x| b.push(x));
        a.merge(&b);
        assert!((a.mean() - all.mean()).abs() < 1e-12);
        assert!((a.variance() - all.variance()).abs() < 1e-12);
        let (m, se) = mean_and_se(&xs);
        assert!((m - 6.2).abs() < 1e-12 && (se - all.standard_error()).abs() < 1e-12);
    }
}
