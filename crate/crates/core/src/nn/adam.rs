use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use crate::error::{Error, Result};

/// Adaptive-moment optimizer state for one parameter group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub m: Vec<Matrix>,
    pub v: Vec<Matrix>,
}

impl Adam {
    pub fn new(shapes: &[(usize, usize)]) -> Self {
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: shapes.iter().map(|&(r, c)| Matrix::zeros(r, c)).collect(),
            v: shapes.iter().map(|&(r, c)| Matrix::zeros(r, c)).collect(),
        }
    }

    pub fn for_params<'a>(params: impl IntoIterator<Item = &'a Matrix>) -> Self {
        let shapes: Vec<_> = params.into_iter().map(Matrix::shape).collect();
        Adam::new(&shapes)
    }

    /// One bias-corrected update. A non-finite gradient rejects the whole
    /// step and leaves parameters and moments untouched.
    pub fn apply(&mut self, params: &mut [&mut Matrix], grads: &[Matrix], lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Dimension { what: "optimizer parameter groups", expected: self.m.len(), got: params.len().min(grads.len()) });
        }
        for (i, g) in grads.iter().enumerate() {
            if g.shape() != self.m[i].shape() || params[i].shape() != g.shape() {
                return Err(Error::Dimension { what: "optimizer tensor", expected: self.m[i].len(), got: g.len() });
            }
            if !g.is_finite() {
                return Err(Error::NonFinite { what: "gradient", detail: format!("tensor {i}") });
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            for k in 0..g.data.len() {
                let gk = g.data[k];
                m.data[k] = self.beta1 * m.data[k] + (1.0 - self.beta1) * gk;
                v.data[k] = self.beta2 * v.data[k] + (1.0 - self.beta2) * gk * gk;
                let mh = m.data[k] / bc1;
                let vh = v.data[k] / bc2;
                p.data[k] -= lr * mh / (vh.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// Global L2 norm over a gradient list.
pub fn global_norm(grads: &[Matrix]) -> f64 {
    grads.iter().map(Matrix::sum_sq).sum::<f64>().sqrt()
}

/// Rescales `grads` so their global norm is at most `max_norm`; returns
/// the norm before clipping.
pub fn clip_global_norm(grads: &mut [Matrix], max_norm: f64) -> f64 {
    let n = global_norm(grads);
    if n > max_norm && n.is_finite() {
        let s = max_norm / n;
        grads.iter_mut().for_each(|g| g.scale_assign(s));
    }
    n
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = Matrix::from_vec(1, 3, vec![1.0, -2.0, 0.5]);
        let before = p.clone();
        let mut opt = Adam::for_params([&p]);
        for _ in 0..10 {
            opt.apply(&mut [&mut p], &[Matrix::zeros(1, 3)], 1e-2).unwrap();
        }
        assert_eq!(p, before);
        assert!(opt.m[0].data.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        for g in [3.0, -0.25] {
            let mut p = Matrix::from_vec(1, 1, vec![0.0]);
            let mut opt = Adam::for_params([&p]);
            opt.apply(&mut [&mut p], &[Matrix::from_vec(1, 1, vec![g])], 1e-3).unwrap();
            assert!((p.data[0] + 1e-3 * g.signum()).abs() < 1e-9);
        }
    }

    #[test]
    fn converges_on_quadratic_bowl() {
        let target = [1.5, -0.7, 0.2];
        let mut p = Matrix::zeros(1, 3);
        let mut opt = Adam::for_params([&p]);
        let mut steps = 0;
        for i in 0..5000 {
            let g: Vec<f64> = p.data.iter().zip(&target).map(|(x, t)| 2.0 * (x - t)).collect();
            let lr = if i < 3000 { 1e-2 } else { 1e-3 };
            opt.apply(&mut [&mut p], &[Matrix::from_vec(1, 3, g)], lr).unwrap();
            steps = i + 1;
            if p.data.iter().zip(&target).all(|(x, t)| (x - t).abs() < 1e-6) {
                break;
            }
        }
        assert!(p.data.iter().zip(&target).all(|(x, t)| (x - t).abs() < 1e-6), "{:?} after {steps}", p.data);
    }

    #[test]
    fn non_finite_gradient_rejected_without_side_effects() {
        let mut p = Matrix::from_vec(1, 2, vec![1.0, 2.0]);
        let mut opt = Adam::for_params([&p]);
        let err = opt.apply(&mut [&mut p], &[Matrix::from_vec(1, 2, vec![f64::NAN, 0.0])], 1e-3);
        assert!(matches!(err, Err(Error::NonFinite { .. })));
        assert_eq!(p.data, vec![1.0, 2.0]);
        assert_eq!(opt.step, 0);
    }
}
