use serde::{Deserialize, Serialize};

use crate::env::ObjectState;
use crate::error::{Error, Result};
use crate::manifold::{relative_rotation, rotation_to_6d, UnitQuaternion};
use crate::nn::Matrix;

/// Width of the state part of a policy input.
pub const STATE_FEATURES: usize = 3 + 6 + 3 + 3;

/// `z ⊕ x ⊕ 6d(R_g⁻¹ R) ⊕ v ⊕ w`. The rotation is always relative to the
/// goal, so the absolute orientation never reaches the policy.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyInput(Vec<f64>);

impl PolicyInput {
    pub fn new(obs: &[f64], state: &ObjectState, goal: UnitQuaternion) -> Self {
        let mut v = Vec::with_capacity(obs.len() + STATE_FEATURES);
        v.extend_from_slice(obs);
        v.extend_from_slice(&state.x);
        v.extend_from_slice(&rotation_to_6d(relative_rotation(goal, state.r)));
        v.extend_from_slice(&state.v);
        v.extend_from_slice(&state.w);
        PolicyInput(v)
    }

    pub fn dim_for(obs_dim: usize) -> usize {
        obs_dim + STATE_FEATURES
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn batch(inputs: &[PolicyInput]) -> Result<Matrix> {
        let cols = inputs.first().map_or(0, |i| i.0.len());
        let mut data = Vec::with_capacity(inputs.len() * cols);
        for i in inputs {
            if i.0.len() != cols {
                return Err(Error::Dimension { what: "policy input", expected: cols, got: i.0.len() });
            }
            data.extend_from_slice(&i.0);
        }
        Ok(Matrix::from_vec(inputs.len(), cols, data))
    }
}

/// Per-feature running mean and variance, merged batch-wise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunningNorm {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub count: f64,
    pub clip: f64,
}

impl RunningNorm {
    pub fn new(dim: usize) -> Self {
        RunningNorm { mean: vec![0.0; dim], var: vec![1.0; dim], count: 1e-4, clip: 5.0 }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn update(&mut self, batch: &Matrix) {
        if batch.rows == 0 {
            return;
        }
        debug_assert_eq!(batch.cols, self.dim());
        let n = batch.rows as f64;
        for c in 0..self.dim() {
            let mut m = 0.0;
            for r in 0..batch.rows {
                m += batch.get(r, c);
            }
            m /= n;
            let mut v = 0.0;
            for r in 0..batch.rows {
                v += (batch.get(r, c) - m).powi(2);
            }
            v /= n;
            let total = self.count + n;
            let delta = m - self.mean[c];
            let m2 = self.var[c] * self.count + v * n + delta * delta * self.count * n / total;
            self.mean[c] += delta * n / total;
            self.var[c] = m2 / total;
        }
        self.count += n;
    }

    pub fn normalize(&self, x: &Matrix) -> Matrix {
        let mut out = x.clone();
        for r in 0..out.rows {
            for (c, v) in out.row_mut(r).iter_mut().enumerate() {
                *v = ((*v - self.mean[c]) / (self.var[c] + 1e-8).sqrt()).clamp(-self.clip, self.clip);
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifold::quat_compose;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn input_layout_and_goal_invariance() {
        let goal = UnitQuaternion::from_axis_angle([0.0, 0.0, 1.0], 0.7);
        let s = ObjectState { x: [1.0, 2.0, 3.0], r: goal, v: [4.0, 5.0, 6.0], w: [7.0, 8.0, 9.0] };
        let i = PolicyInput::new(&[0.5; 144], &s, goal);
        assert_eq!(i.as_slice().len(), PolicyInput::dim_for(144));
        assert_eq!(i.as_slice().len(), 159);
        assert_eq!(&i.as_slice()[144..147], &[1.0, 2.0, 3.0]);
        // on-goal orientation reads as the identity
        let rot6 = &i.as_slice()[147..153];
        let id = rotation_to_6d(UnitQuaternion::IDENTITY);
        assert!(rot6.iter().zip(id).all(|(a, b)| (a - b).abs() < 1e-12));
        assert_eq!(&i.as_slice()[153..], &[4.0, 5.0, 6.0, 7.0, 8.0, 9.0]);
        // rotating object and goal together leaves the input unchanged
        let g = UnitQuaternion::from_axis_angle([1.0, 0.0, 0.0], 1.1);
        let turned = ObjectState { r: quat_compose(g, s.r), ..s };
        let j = PolicyInput::new(&[0.5; 144], &turned, quat_compose(g, goal));
        assert!(i.as_slice().iter().zip(j.as_slice()).all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn running_norm_matches_two_pass_statistics() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rows: Vec<Vec<f64>> = (0..300).map(|_| vec![rng.random_range(-1.0..3.0), rng.random_range(10.0..20.0)]).collect();
        let mut norm = RunningNorm::new(2);
        for chunk in rows.chunks(37) {
            norm.update(&Matrix::from_rows(chunk));
        }
        for c in 0..2 {
            let m: f64 = rows.iter().map(|r| r[c]).sum::<f64>() / 300.0;
            let v: f64 = rows.iter().map(|r| (r[c] - m).powi(2)).sum::<f64>() / 300.0;
            assert!((norm.mean[c] - m).abs() < 1e-5, "{} vs {m}", norm.mean[c]);
            assert!((norm.var[c] - v).abs() / v < 1e-4);
        }
        let z = norm.normalize(&Matrix::from_rows(&rows));
        let mz: f64 = (0..300).map(|r| z.get(r, 1)).sum::<f64>() / 300.0;
        assert!(mz.abs() < 1e-4);
    }
}
