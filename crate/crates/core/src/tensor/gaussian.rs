//! Diagonal Gaussians with bounded log standard deviations.

use std::f64::consts::{E, PI};

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Result};

/// `ln 1e-4`
pub const LOG_STD_MIN: f64 = -9.210_340_371_976_184;
/// `ln 2`
pub const LOG_STD_MAX: f64 = std::f64::consts::LN_2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagGaussian {
    mean: Vec<f64>,
    log_std: Vec<f64>,
}

impl DiagGaussian {
    /// Builds the distribution, clamping every `log_std` into
    /// `[LOG_STD_MIN, LOG_STD_MAX]`.
    pub fn new(mean: Vec<f64>, log_std: Vec<f64>) -> Result<Self> {
        check_dim("gaussian log_std", mean.len(), log_std.len())?;
        let log_std = log_std
            .into_iter()
            .map(|l| l.clamp(LOG_STD_MIN, LOG_STD_MAX))
            .collect();
        Ok(Self { mean, log_std })
    }

    pub fn from_std(mean: Vec<f64>, std: &[f64]) -> Result<Self> {
        Self::new(mean, std.iter().map(|s| s.ln()).collect())
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn log_std(&self) -> &[f64] {
        &self.log_std
    }

    pub fn std(&self) -> Vec<f64> {
        self.log_std.iter().map(|l| l.exp()).collect()
    }

    /// Reparameterised sample `mean + std ⊙ noise`.
    pub fn sample(&self, noise: &[f64]) -> Result<Vec<f64>> {
        check_dim("gaussian noise", self.dim(), noise.len())?;
        Ok(self
            .mean
            .iter()
            .zip(&self.log_std)
            .zip(noise)
            .map(|((m, l), n)| m + l.exp() * n)
            .collect())
    }

    pub fn log_prob(&self, x: &[f64]) -> Result<f64> {
        check_dim("gaussian point", self.dim(), x.len())?;
        Ok(self
            .mean
            .iter()
            .zip(&self.log_std)
            .zip(x)
            .map(|((m, l), x)| normal_log_density(*x, *m, *l))
            .sum())
    }

    pub fn entropy(&self) -> f64 {
        self.log_std
            .iter()
            .map(|l| 0.5 * (2.0 * PI * E).ln() + l)
            .sum()
    }

    /// `KL(self ‖ other)` in closed form.
    pub fn kl(&self, other: &DiagGaussian) -> Result<f64> {
        check_dim("gaussian kl", self.dim(), other.dim())?;
        Ok(self
            .mean
            .iter()
            .zip(&self.log_std)
            .zip(other.mean.iter().zip(&other.log_std))
            .map(|((m1, l1), (m2, l2))| kl_normal(*m1, *l1, *m2, *l2))
            .sum())
    }
}

pub fn normal_log_density(x: f64, mean: f64, log_std: f64) -> f64 {
    let z = (x - mean) * (-log_std).exp();
    -0.5 * z * z - log_std - 0.5 * (2.0 * PI).ln()
}

pub fn kl_normal(m1: f64, l1: f64, m2: f64, l2: f64) -> f64 {
    let var_ratio = (2.0 * (l1 - l2)).exp();
    let d = (m1 - m2) * (-l2).exp();
    // clamp guards the exact-equality case against -0.0 style round-off
    (l2 - l1 + 0.5 * (var_ratio + d * d) - 0.5).max(0.0)
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Smoothly squeeze a raw network output into `[lo, hi]`. Returns the bounded
/// value and its derivative with respect to `raw`.
pub fn soft_bound(raw: f64, lo: f64, hi: f64) -> (f64, f64) {
    let upper = hi - softplus(hi - raw);
    let value = (lo + softplus(upper - lo)).min(hi);
    let grad = sigmoid(hi - raw) * sigmoid(upper - lo);
    (value, grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn zero_noise_returns_mean() {
        let d = DiagGaussian::new(vec![1.0, -2.0], vec![0.3, -1.0]).unwrap();
        assert_eq!(d.sample(&[0.0, 0.0]).unwrap(), vec![1.0, -2.0]);
    }

    #[test]
    fn zero_std_is_floored() {
        let d = DiagGaussian::from_std(vec![0.5], &[0.0]).unwrap();
        let noise = 3.0;
        let x = d.sample(&[noise]).unwrap()[0];
        assert!((x - 0.5).abs() <= 1e-4 * noise + 1e-15);
        assert_eq!(d.log_std()[0], LOG_STD_MIN);
    }

    #[test]
    fn large_std_is_capped() {
        let d = DiagGaussian::from_std(vec![0.0], &[50.0]).unwrap();
        assert_eq!(d.log_std()[0], LOG_STD_MAX);
    }

    #[test]
    fn standard_normal_log_prob_at_zero() {
        let d = DiagGaussian::new(vec![0.0], vec![0.0]).unwrap();
        let lp = d.log_prob(&[0.0]).unwrap();
        assert!((lp + 0.5 * (2.0 * PI).ln()).abs() < 1e-15);
        assert!((lp + 0.9189).abs() < 1e-4);
    }

    #[test]
    fn log_prob_is_translation_invariant() {
        let a = DiagGaussian::new(vec![0.2, -1.0], vec![-0.5, 0.4]).unwrap();
        let b = DiagGaussian::new(vec![3.2, 1.0], vec![-0.5, 0.4]).unwrap();
        let la = a.log_prob(&[0.7, -0.1]).unwrap();
        let lb = b.log_prob(&[3.7, 1.9]).unwrap();
        assert!((la - lb).abs() < 1e-12);
    }

    #[test]
    fn density_integrates_to_one() {
        // trapezoid rule over ±12σ
        let d = DiagGaussian::new(vec![0.3], vec![(0.7f64).ln()]).unwrap();
        let (lo, hi, n) = (0.3 - 12.0 * 0.7, 0.3 + 12.0 * 0.7, 20_000);
        let h = (hi - lo) / n as f64;
        let mut total = 0.0;
        for i in 0..=n {
            let x = lo + i as f64 * h;
            let w = if i == 0 || i == n { 0.5 } else { 1.0 };
            total += w * d.log_prob(&[x]).unwrap().exp();
        }
        assert!((total * h - 1.0).abs() < 1e-3);
    }

    #[test]
    fn density_ratio_matches_quadrature() {
        // P(a < X < b) from the density against the error function route
        let d = DiagGaussian::new(vec![0.0], vec![0.0]).unwrap();
        let (a, b, n) = (-1.0, 1.0, 10_000);
        let h = (b - a) / n as f64;
        let mut mass = 0.0;
        for i in 0..=n {
            let x = a + i as f64 * h;
            let w = if i == 0 || i == n { 0.5 } else { 1.0 };
            mass += w * d.log_prob(&[x]).unwrap().exp();
        }
        // P(|Z| < 1) = 0.682689492137...
        assert!((mass * h - 0.682_689_492_137_086).abs() < 1e-6);
    }

    #[test]
    fn unit_entropy_per_dimension() {
        let d = DiagGaussian::new(vec![0.0; 3], vec![0.0; 3]).unwrap();
        assert!((d.entropy() - 3.0 * 1.418_938_533_204_672_7).abs() < 1e-12);
    }

    #[test]
    fn doubling_std_adds_ln2_per_dim() {
        let a = DiagGaussian::from_std(vec![0.0; 2], &[0.3, 0.5]).unwrap();
        let b = DiagGaussian::from_std(vec![0.0; 2], &[0.6, 1.0]).unwrap();
        assert!((b.entropy() - a.entropy() - 2.0 * std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn monte_carlo_mean_and_entropy() {
        let d = DiagGaussian::new(vec![0.4, -1.2], vec![(0.5f64).ln(), (1.5f64).ln()]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 100_000;
        let mut sum = [0.0; 2];
        let mut neg_log_prob = 0.0;
        for _ in 0..n {
            let noise: Vec<f64> = (0..2).map(|_| StandardNormal.sample(&mut rng)).collect();
            let x = d.sample(&noise).unwrap();
            sum[0] += x[0];
            sum[1] += x[1];
            neg_log_prob -= d.log_prob(&x).unwrap();
        }
        let std = d.std();
        for k in 0..2 {
            let emp = sum[k] / n as f64;
            assert!((emp - d.mean()[k]).abs() < 3.0 * std[k] / (n as f64).sqrt());
        }
        let mc = neg_log_prob / n as f64;
        assert!((mc - d.entropy()).abs() / d.entropy().abs() < 0.01);
    }

    #[test]
    fn kl_is_zero_for_identical_and_positive_otherwise() {
        let a = DiagGaussian::new(vec![0.1, 0.2], vec![-0.3, 0.1]).unwrap();
        let b = DiagGaussian::new(vec![0.5, 0.2], vec![-0.1, 0.1]).unwrap();
        assert_eq!(a.kl(&a).unwrap(), 0.0);
        assert!(a.kl(&b).unwrap() > 0.0);
    }

    #[test]
    fn soft_bound_stays_in_range_with_correct_derivative() {
        for &raw in &[-50.0, -9.0, -1.0, 0.0, 0.5, 3.0, 40.0] {
            let (v, g) = soft_bound(raw, LOG_STD_MIN, LOG_STD_MAX);
            assert!((LOG_STD_MIN..=LOG_STD_MAX).contains(&v));
            let h = 1e-6;
            let numeric = (soft_bound(raw + h, LOG_STD_MIN, LOG_STD_MAX).0
                - soft_bound(raw - h, LOG_STD_MIN, LOG_STD_MAX).0)
                / (2.0 * h);
            assert!((numeric - g).abs() < 1e-6);
        }
    }
}
