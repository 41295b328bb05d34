use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ActorCritic;
use crate::error::{Error, Result};
use crate::nn::{clip_global_norm, Adam, Matrix, Tape};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpoConfig {
    pub clip: f64,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub gamma: f64,
    pub tau: f64,
    pub epochs: usize,
    pub minibatch_size: usize,
    pub lr: f64,
    pub kl_target: f64,
    pub lr_factor: f64,
    pub lr_min: f64,
    pub lr_max: f64,
    /// Stop the update once a minibatch's KL exceeds this multiple of the
    /// target.
    pub kl_stop_factor: f64,
    pub max_grad_norm: f64,
    pub clip_value: bool,
    pub normalize_advantages: bool,
}

impl Default for PpoConfig {
    fn default() -> Self {
        PpoConfig {
            clip: 0.2,
            entropy_coef: 1e-3,
            value_coef: 1.0,
            gamma: 0.99,
            tau: 0.95,
            epochs: 4,
            minibatch_size: 4096,
            lr: 3e-4,
            kl_target: 0.016,
            lr_factor: 1.5,
            lr_min: 1e-6,
            lr_max: 1e-2,
            kl_stop_factor: 10.0,
            max_grad_norm: 1.0,
            clip_value: true,
            normalize_advantages: true,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("ppo.clip", self.clip),
            ("ppo.gamma", self.gamma),
            ("ppo.tau", self.tau),
            ("ppo.lr", self.lr),
            ("ppo.kl_target", self.kl_target),
            ("ppo.lr_min", self.lr_min),
            ("ppo.max_grad_norm", self.max_grad_norm),
        ];
        for (path, v) in positive {
            if !(v > 0.0) {
                return Err(Error::config(path, format!("must be positive, got {v}")));
            }
        }
        if self.gamma > 1.0 || self.tau > 1.0 {
            return Err(Error::config("ppo.gamma", "discount and trace parameters must be at most 1"));
        }
        if self.entropy_coef < 0.0 || self.value_coef < 0.0 {
            return Err(Error::config("ppo.entropy_coef", "loss coefficients must be non-negative"));
        }
        if self.minibatch_size == 0 {
            return Err(Error::config("ppo.minibatch_size", "must be positive"));
        }
        if self.lr_factor <= 1.0 || self.lr_max < self.lr_min {
            return Err(Error::config("ppo.lr_factor", "needs lr_factor > 1 and lr_min <= lr_max"));
        }
        Ok(())
    }
}

/// Generalized advantage estimates for one environment's segment.
/// `dones[t]` ends the episode after step `t`, so nothing later leaks back
/// across it. `last_value` bootstraps the step after the segment.
pub fn gae(rewards: &[f64], values: &[f64], dones: &[bool], last_value: f64, gamma: f64, tau: f64) -> (Vec<f64>, Vec<f64>) {
    let n = rewards.len();
    assert!(values.len() == n && dones.len() == n, "gae inputs must be aligned");
    let mut adv = vec![0.0; n];
    let mut next_value = last_value;
    let mut running = 0.0;
    for t in (0..n).rev() {
        let live = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * next_value * live - values[t];
        running = delta + gamma * tau * live * running;
        adv[t] = running;
        next_value = values[t];
    }
    let ret = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    (adv, ret)
}

/// KL-adaptive learning rate step.
pub fn adapt_lr(lr: f64, approx_kl: f64, cfg: &PpoConfig) -> f64 {
    let next = if approx_kl > 2.0 * cfg.kl_target {
        lr / cfg.lr_factor
    } else if approx_kl < 0.5 * cfg.kl_target {
        lr * cfg.lr_factor
    } else {
        lr
    };
    next.clamp(cfg.lr_min, cfg.lr_max)
}

/// Flattened on-policy samples for one update.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PpoBatch {
    /// Normalized inputs as seen at collection time.
    pub inputs: Matrix,
    pub raw_actions: Matrix,
    pub logprob: Vec<f64>,
    pub values: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl PpoBatch {
    pub fn len(&self) -> usize {
        self.logprob.len()
    }

    pub fn is_empty(&self) -> bool {
        self.logprob.is_empty()
    }

    pub fn select(&self, idx: &[usize]) -> PpoBatch {
        let pick = |v: &[f64]| idx.iter().map(|&i| v[i]).collect::<Vec<_>>();
        PpoBatch {
            inputs: self.inputs.select_rows(idx),
            raw_actions: self.raw_actions.select_rows(idx),
            logprob: pick(&self.logprob),
            values: pick(&self.values),
            advantages: pick(&self.advantages),
            returns: pick(&self.returns),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct LossParts {
    pub total: f64,
    pub policy: f64,
    pub value: f64,
    pub entropy: f64,
    pub approx_kl: f64,
    pub clip_fraction: f64,
}

impl ActorCritic {
    /// Clipped-surrogate loss of a minibatch and its gradient, ordered as
    /// [`ActorCritic::params`].
    pub fn loss_and_grad(&self, mb: &PpoBatch, cfg: &PpoConfig) -> Result<(LossParts, Vec<Matrix>)> {
        let n = mb.len();
        if n == 0 {
            return Err(Error::TooFewSamples { needed: 1, got: 0 });
        }
        let adv = if cfg.normalize_advantages && n > 1 {
            let m = mb.advantages.iter().sum::<f64>() / n as f64;
            let s = (mb.advantages.iter().map(|a| (a - m).powi(2)).sum::<f64>() / n as f64).sqrt();
            mb.advantages.iter().map(|a| (a - m) / (s + 1e-8)).collect()
        } else {
            mb.advantages.clone()
        };
        let nf = n as f64;
        let d = self.action_dim();

        let mut tape = Tape::new();
        let x = tape.input(mb.inputs.clone());
        let mean_var = self.pi.forward_tape(&mut tape, x)?;
        let mean = tape.value(mean_var).clone();
        let ls: Vec<f64> = self.head.log_std.data.clone();
        let inv_var: Vec<f64> = ls.iter().map(|l| (-2.0 * l.clamp(crate::nn::gaussian::LOG_STD_MIN, crate::nn::gaussian::LOG_STD_MAX)).exp()).collect();

        let mut parts = LossParts::default();
        let mut g_mean = Matrix::zeros(n, d);
        let mut g_ls = Matrix::zeros(1, d);
        let mut clipped = 0usize;
        for i in 0..n {
            let mu = mean.row(i);
            let a = mb.raw_actions.row(i);
            let lp = self.head.log_prob(mu, a);
            let log_ratio = lp - mb.logprob[i];
            let ratio = log_ratio.exp();
            let lo = 1.0 - cfg.clip;
            let hi = 1.0 + cfg.clip;
            let surr = (ratio * adv[i]).min(ratio.clamp(lo, hi) * adv[i]);
            parts.policy -= surr / nf;
            parts.approx_kl += ((ratio - 1.0) - log_ratio) / nf;
            let clip_active = (adv[i] >= 0.0 && ratio > hi) || (adv[i] < 0.0 && ratio < lo);
            if ratio > hi || ratio < lo {
                clipped += 1;
            }
            if clip_active {
                continue;
            }
            // d(-ratio·A/n)/d logp
            let g = -ratio * adv[i] / nf;
            for j in 0..d {
                let diff = a[j] - mu[j];
                g_mean.set(i, j, g * diff * inv_var[j]);
                g_ls.data[j] += g * (diff * diff * inv_var[j] - 1.0);
            }
        }
        parts.clip_fraction = clipped as f64 / nf;
        parts.entropy = self.head.entropy();
        for j in 0..d {
            let l = ls[j];
            if (crate::nn::gaussian::LOG_STD_MIN..=crate::nn::gaussian::LOG_STD_MAX).contains(&l) {
                g_ls.data[j] -= cfg.entropy_coef;
            }
        }

        let pi_refs = self.pi.param_refs();
        let mut grads = tape.backward(&pi_refs, vec![(mean_var, g_mean)]).params;
        grads.push(g_ls);

        let mut vtape = Tape::new();
        let vx = vtape.input(mb.inputs.clone());
        let v_var = self.vf.forward_tape(&mut vtape, vx)?;
        let v = vtape.value(v_var).clone();
        let mut g_v = Matrix::zeros(n, 1);
        for i in 0..n {
            let err = v.data[i] - mb.returns[i];
            let mut loss = err * err;
            let mut grad = err;
            if cfg.clip_value {
                let vc = mb.values[i] + (v.data[i] - mb.values[i]).clamp(-cfg.clip, cfg.clip);
                let errc = vc - mb.returns[i];
                if errc * errc > loss {
                    loss = errc * errc;
                    grad = 0.0;
                }
            }
            parts.value += 0.5 * loss / nf;
            g_v.data[i] = cfg.value_coef * grad / nf;
        }
        grads.extend(vtape.backward(&self.vf.param_refs(), vec![(v_var, g_v)]).params);

        parts.total = parts.policy + cfg.value_coef * parts.value - cfg.entropy_coef * parts.entropy;
        Ok((parts, grads))
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct PpoMetrics {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub approx_kl: f64,
    pub clip_fraction: f64,
    pub lr: f64,
    pub steps: usize,
    pub early_stopped: bool,
}

/// Runs `cfg.epochs` passes of shuffled minibatches over `batch`; `lr` is
/// adapted in place from each minibatch's KL.
pub fn ppo_update(ac: &mut ActorCritic, opt: &mut Adam, lr: &mut f64, batch: &PpoBatch, cfg: &PpoConfig, rng: &mut impl Rng) -> Result<PpoMetrics> {
    let n = batch.len();
    if n == 0 {
        return Err(Error::TooFewSamples { needed: 1, got: 0 });
    }
    let mb = cfg.minibatch_size.min(n);
    let chunks = n.div_ceil(mb);
    let mut m = PpoMetrics::default();
    let mut order: Vec<usize> = (0..n).collect();
    'epochs: for _ in 0..cfg.epochs {
        order.shuffle(rng);
        for c in 0..chunks {
            let idx = &order[c * n / chunks..(c + 1) * n / chunks];
            let sub = batch.select(idx);
            let (parts, mut grads) = ac.loss_and_grad(&sub, cfg)?;
            if parts.approx_kl > cfg.kl_stop_factor * cfg.kl_target {
                m.early_stopped = true;
                break 'epochs;
            }
            clip_global_norm(&mut grads, cfg.max_grad_norm);
            opt.apply(&mut ac.params_mut(), &grads, *lr)?;
            ac.head.clamp_params();
            *lr = adapt_lr(*lr, parts.approx_kl, cfg);
            m.steps += 1;
            m.policy_loss += parts.policy;
            m.value_loss += parts.value;
            m.entropy += parts.entropy;
            m.approx_kl += parts.approx_kl;
            m.clip_fraction += parts.clip_fraction;
        }
    }
    if m.steps > 0 {
        let s = m.steps as f64;
        m.policy_loss /= s;
        m.value_loss /= s;
        m.entropy /= s;
        m.approx_kl /= s;
        m.clip_fraction /= s;
    }
    m.lr = *lr;
    Ok(m)
}
