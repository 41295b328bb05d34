use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::matrix::Matrix;

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 1.0;

/// Diagonal Gaussian with state-independent log standard deviations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianHead {
    /// `1 x d` parameter row.
    pub log_std: Matrix,
}

impl GaussianHead {
    pub fn new(dim: usize, init_std: f64) -> Self {
        GaussianHead { log_std: Matrix::filled(1, dim, init_std.ln().clamp(LOG_STD_MIN, LOG_STD_MAX)) }
    }

    pub fn dim(&self) -> usize {
        self.log_std.cols
    }

    pub fn clamp_params(&mut self) {
        for v in &mut self.log_std.data {
            *v = v.clamp(LOG_STD_MIN, LOG_STD_MAX);
        }
    }

    pub fn std(&self) -> Vec<f64> {
        self.log_std.data.iter().map(|l| l.clamp(LOG_STD_MIN, LOG_STD_MAX).exp()).collect()
    }

    pub fn sample(&self, mean: &[f64], rng: &mut impl Rng) -> (Vec<f64>, f64) {
        let action: Vec<f64> = mean
            .iter()
            .zip(self.std())
            .map(|(m, s)| m + s * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let lp = self.log_prob(mean, &action);
        (action, lp)
    }

    pub fn log_prob(&self, mean: &[f64], action: &[f64]) -> f64 {
        debug_assert_eq!(mean.len(), self.dim());
        let half_log_2pi = 0.5 * (2.0 * PI).ln();
        mean.iter()
            .zip(action)
            .zip(&self.log_std.data)
            .map(|((m, a), ls)| {
                let ls = ls.clamp(LOG_STD_MIN, LOG_STD_MAX);
                let z = (a - m) / ls.exp();
                -0.5 * z * z - ls - half_log_2pi
            })
            .sum()
    }

    /// `(d logp / d mean, d logp / d log_std)` for one sample.
    pub fn log_prob_grad(&self, mean: &[f64], action: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut gm = Vec::with_capacity(mean.len());
        let mut gs = Vec::with_capacity(mean.len());
        for ((m, a), ls) in mean.iter().zip(action).zip(&self.log_std.data) {
            let inv_var = (-2.0 * ls.clamp(LOG_STD_MIN, LOG_STD_MAX)).exp();
            let d = a - m;
            gm.push(d * inv_var);
            gs.push(d * d * inv_var - 1.0);
        }
        (gm, gs)
    }

    /// Differential entropy; its gradient w.r.t. each log-std is 1.
    pub fn entropy(&self) -> f64 {
        let per_dim = 0.5 + 0.5 * (2.0 * PI).ln();
        self.log_std.data.iter().map(|ls| per_dim + ls.clamp(LOG_STD_MIN, LOG_STD_MAX)).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn closed_forms_at_unit_std() {
        let head = GaussianHead::new(12, 1.0);
        let mean = vec![0.3; 12];
        let lp = head.log_prob(&mean, &mean);
        assert!((lp - (-6.0 * (2.0 * PI).ln())).abs() < 1e-12);
        assert!((head.entropy() - 12.0 * (0.5 + 0.5 * (2.0 * PI).ln())).abs() < 1e-12);
    }

    #[test]
    fn density_integrates_to_one() {
        let head = GaussianHead::new(1, 0.6);
        let (lo, hi, n) = (-8.0, 8.0, 20_000);
        let h = (hi - lo) / n as f64;
        let total: f64 = (0..=n)
            .map(|i| {
                let x = lo + i as f64 * h;
                let w = if i == 0 || i == n { 0.5 } else { 1.0 };
                w * head.log_prob(&[0.1], &[x]).exp()
            })
            .sum::<f64>()
            * h;
        assert!((total - 1.0).abs() < 1e-6, "integral {total}");
    }

    #[test]
    fn entropy_matches_sampled_negative_logprob() {
        let head = GaussianHead::new(4, 0.6);
        let mean = [0.0, 1.0, -1.0, 0.5];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 20_000;
        let samples: Vec<f64> = (0..n).map(|_| -head.sample(&mean, &mut rng).1).collect();
        let avg = samples.iter().sum::<f64>() / n as f64;
        let var = samples.iter().map(|s| (s - avg).powi(2)).sum::<f64>() / (n - 1) as f64;
        let se = (var / n as f64).sqrt();
        assert!((avg - head.entropy()).abs() < 3.0 * se, "avg {avg} entropy {}", head.entropy());
    }

    #[test]
    fn log_prob_gradient_matches_finite_differences() {
        let mut head = GaussianHead::new(3, 0.7);
        head.log_std.data = vec![-0.3, 0.1, -0.8];
        let mean = [0.2, -0.4, 0.9];
        let action = [0.5, -0.1, 0.3];
        let (gm, gs) = head.log_prob_grad(&mean, &action);
        let h = 1e-6;
        for i in 0..3 {
            let mut mp = mean;
            let mut mm = mean;
            mp[i] += h;
            mm[i] -= h;
            let fd = (head.log_prob(&mp, &action) - head.log_prob(&mm, &action)) / (2.0 * h);
            assert!((fd - gm[i]).abs() < 1e-6);
            let mut hp = head.clone();
            let mut hm = head.clone();
            hp.log_std.data[i] += h;
            hm.log_std.data[i] -= h;
            let fd = (hp.log_prob(&mean, &action) - hm.log_prob(&mean, &action)) / (2.0 * h);
            assert!((fd - gs[i]).abs() < 1e-6);
        }
    }
}
