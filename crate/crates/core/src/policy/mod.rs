//! Goal-conditioned stochastic policy and value function trained with a
//! clipped surrogate objective.
//!
//! Actions are joint targets `u = limit · tanh(a)` where `a` is drawn from
//! a diagonal Gaussian around the policy network's output. Rollouts store
//! the pre-squash sample `a`, so ratios in the update never need to invert
//! the squash.

mod input;
mod ppo;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

pub use input::{PolicyInput, RunningNorm, STATE_FEATURES};
pub use ppo::{adapt_lr, gae, ppo_update, LossParts, PpoBatch, PpoConfig, PpoMetrics};

use crate::error::{Error, Result};
use crate::nn::{Activation, DenseSkipNet, GaussianHead, Matrix};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyConfig {
    pub hidden: Vec<usize>,
    pub value_hidden: Vec<usize>,
    pub init_std: f64,
    /// Output range of the squashed action.
    pub action_limit: f64,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig { hidden: vec![64, 64, 32, 16], value_hidden: vec![64, 64, 32, 16], init_std: 0.05, action_limit: 1.2 }
    }
}

impl PolicyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::config("policy.hidden", "needs at least one non-empty layer"));
        }
        if self.value_hidden.is_empty() || self.value_hidden.contains(&0) {
            return Err(Error::config("policy.value_hidden", "needs at least one non-empty layer"));
        }
        if !(self.init_std > 0.0) {
            return Err(Error::config("policy.init_std", "must be positive"));
        }
        if !(self.action_limit > 0.0) {
            return Err(Error::config("policy.action_limit", "must be positive"));
        }
        Ok(())
    }
}

/// Output of [`ActorCritic::act`] for a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct ActBatch {
    /// Normalized inputs the networks actually saw.
    pub inputs: Matrix,
    /// Squashed actions, one row per environment.
    pub actions: Matrix,
    /// Pre-squash samples.
    pub raw: Matrix,
    /// Log density of `actions` including the squash correction.
    pub logprob: Vec<f64>,
    /// Log density of `raw`, the quantity ratios are taken over.
    pub raw_logprob: Vec<f64>,
    pub value: Vec<f64>,
}

/// Policy and value networks over the same input; there is no privileged
/// critic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActorCritic {
    pub pi: DenseSkipNet,
    pub head: GaussianHead,
    pub vf: DenseSkipNet,
    pub norm: RunningNorm,
    pub action_limit: f64,
}

impl ActorCritic {
    pub fn new(input_dim: usize, action_dim: usize, cfg: &PolicyConfig, rng: &mut impl Rng) -> Result<Self> {
        cfg.validate()?;
        let mut pi = DenseSkipNet::new(input_dim, &cfg.hidden, action_dim, Activation::Elu);
        pi.init_orthogonal(rng, std::f64::consts::SQRT_2, 0.01);
        let mut vf = DenseSkipNet::new(input_dim, &cfg.value_hidden, 1, Activation::Elu);
        vf.init_orthogonal(rng, std::f64::consts::SQRT_2, 1.0);
        Ok(ActorCritic {
            pi,
            head: GaussianHead::new(action_dim, cfg.init_std),
            vf,
            norm: RunningNorm::new(input_dim),
            action_limit: cfg.action_limit,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.pi.input_dim
    }

    pub fn action_dim(&self) -> usize {
        self.pi.output_dim
    }

    /// All trainable tensors: policy net, log-std row, value net.
    pub fn params(&self) -> Vec<&Matrix> {
        let mut p: Vec<&Matrix> = self.pi.params().iter().collect();
        p.push(&self.head.log_std);
        p.extend(self.vf.params());
        p
    }

    pub fn params_mut(&mut self) -> Vec<&mut Matrix> {
        let mut p: Vec<&mut Matrix> = self.pi.params_mut().iter_mut().collect();
        p.push(&mut self.head.log_std);
        p.extend(self.vf.params_mut().iter_mut());
        p
    }

    pub fn squash(&self, raw: f64) -> f64 {
        self.action_limit * raw.tanh()
    }

    /// `log |du/da|` summed over dimensions.
    fn squash_log_det(&self, raw: &[f64]) -> f64 {
        raw.iter().map(|a| (self.action_limit * (1.0 - a.tanh().powi(2)) + 1e-12).ln()).sum()
    }

    /// Log density of squashed actions recovered from their pre-squash
    /// samples.
    pub fn log_prob(&self, mean: &[f64], raw: &[f64]) -> f64 {
        self.head.log_prob(mean, raw) - self.squash_log_det(raw)
    }

    /// Acts on unnormalized inputs using the current (frozen) statistics.
    pub fn act(&self, inputs: &Matrix, rng: &mut impl Rng, deterministic: bool) -> Result<ActBatch> {
        if inputs.cols != self.input_dim() {
            return Err(Error::Dimension { what: "policy input", expected: self.input_dim(), got: inputs.cols });
        }
        let x = self.norm.normalize(inputs);
        let mean = self.pi.forward(&x)?;
        let value = self.vf.forward(&x)?;
        let std = self.head.std();
        let mut raw = mean.clone();
        if !deterministic {
            for r in 0..raw.rows {
                for (a, s) in raw.row_mut(r).iter_mut().zip(&std) {
                    *a += s * rng.sample::<f64, _>(StandardNormal);
                }
            }
        }
        let actions = raw.map(|a| self.squash(a));
        let mut logprob = Vec::with_capacity(raw.rows);
        let mut raw_logprob = Vec::with_capacity(raw.rows);
        for r in 0..raw.rows {
            let lp = self.head.log_prob(mean.row(r), raw.row(r));
            raw_logprob.push(lp);
            logprob.push(lp - self.squash_log_det(raw.row(r)));
        }
        if !actions.is_finite() || !value.is_finite() || logprob.iter().any(|l| !l.is_finite()) {
            return Err(Error::NonFinite { what: "policy output", detail: format!("batch of {}", raw.rows) });
        }
        Ok(ActBatch { inputs: x, actions, raw, logprob, raw_logprob, value: value.data })
    }

    /// Value estimates of unnormalized inputs.
    pub fn value(&self, inputs: &Matrix) -> Result<Vec<f64>> {
        Ok(self.vf.forward(&self.norm.normalize(inputs))?.data)
    }

    /// Parameter fingerprint used to verify freezing.
    pub fn param_hash(&self) -> u64 {
        use std::hash::{Hash, Hasher};
        let mut h = std::collections::hash_map::DefaultHasher::new();
        for p in self.params() {
            for v in &p.data {
                v.to_bits().hash(&mut h);
            }
        }
        h.finish()
    }
}

#[cfg(test)]
mod tests;
