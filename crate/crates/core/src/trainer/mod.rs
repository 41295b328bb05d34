//! Alternating collection and learning: vectorized rollouts whose policy
//! inputs mix ground truth and estimator output under the ρ schedule,
//! followed by an estimator epoch and a policy update on the same buffer.

mod rollout;
mod state;

use serde::{Deserialize, Serialize};

pub use rollout::{EnvRunner, RolloutBuffer, RolloutStats, RolloutStep};
pub use state::{Agent, IterationMetrics, MetricsLog, TrainState};

use crate::env::{EnvConfig, ObjectSpec};
use crate::error::{Error, Result};
use crate::estimator::EstimatorConfig;
use crate::policy::{PolicyConfig, PpoConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum TrainMode {
    /// Estimate fed to the policy with probability `1 - ρ`, ρ annealed.
    Ecrl,
    /// Policy trained on ground truth, estimator trained alongside.
    Naive,
    /// Frozen policy, estimator retrained in closed loop.
    Estimada,
    /// Ground truth throughout, no estimator.
    Oracle,
}

impl TrainMode {
    pub const ALL: [TrainMode; 4] = [TrainMode::Ecrl, TrainMode::Naive, TrainMode::Estimada, TrainMode::Oracle];

    pub fn name(self) -> &'static str {
        match self {
            TrainMode::Ecrl => "ecrl",
            TrainMode::Naive => "naive",
            TrainMode::Estimada => "estimada",
            TrainMode::Oracle => "oracle",
        }
    }

    pub fn trains_policy(self) -> bool {
        self != TrainMode::Estimada
    }

    pub fn trains_estimator(self) -> bool {
        self != TrainMode::Oracle
    }
}

impl std::fmt::Display for TrainMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for TrainMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TrainMode::ALL.into_iter().find(|m| m.name() == s).ok_or_else(|| {
            Error::config("mode", format!("unknown mode `{s}`; valid modes are ecrl, naive, estimada, oracle"))
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub mode: TrainMode,
    pub object: String,
    pub seed: u64,
    pub n_envs: usize,
    pub rollout_len: usize,
    pub iterations: usize,
    pub rho0: f64,
    pub delta_rho: f64,
    /// Multiplies environment rewards before advantage estimation.
    pub reward_scale: f64,
    pub workers: usize,
    pub checkpoint_every: usize,
    pub env: EnvConfig,
    pub estimator: EstimatorConfig,
    pub policy: PolicyConfig,
    pub ppo: PpoConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            mode: TrainMode::Ecrl,
            object: "cube".into(),
            seed: 1,
            n_envs: 256,
            rollout_len: 32,
            iterations: 2000,
            rho0: 1.0,
            delta_rho: 1e-3,
            reward_scale: 0.01,
            workers: 1,
            checkpoint_every: 100,
            env: EnvConfig::default(),
            estimator: EstimatorConfig::default(),
            policy: PolicyConfig::default(),
            ppo: PpoConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        ObjectSpec::preset(&self.object)?;
        if self.n_envs == 0 {
            return Err(Error::config("n_envs", "must be positive"));
        }
        if self.rollout_len == 0 {
            return Err(Error::config("rollout_len", "must be positive"));
        }
        if !(0.0..=1.0).contains(&self.rho0) {
            return Err(Error::config("rho0", format!("must lie in [0, 1], got {}", self.rho0)));
        }
        if !(self.delta_rho >= 0.0) {
            return Err(Error::config("delta_rho", "must be non-negative"));
        }
        if !(self.reward_scale > 0.0) {
            return Err(Error::config("reward_scale", "must be positive"));
        }
        if self.ppo.minibatch_size > self.n_envs * self.rollout_len {
            return Err(Error::config(
                "ppo.minibatch_size",
                format!("{} exceeds the buffer size {}", self.ppo.minibatch_size, self.n_envs * self.rollout_len),
            ));
        }
        self.env.validate()?;
        self.estimator.validate()?;
        self.policy.validate()?;
        self.ppo.validate()
    }

    /// Ground-truth probability at iteration `i`.
    pub fn rho_at(&self, i: u64) -> f64 {
        match self.mode {
            TrainMode::Ecrl => (self.rho0 - i as f64 * self.delta_rho).clamp(0.0, 1.0),
            TrainMode::Naive | TrainMode::Oracle => 1.0,
            TrainMode::Estimada => 0.0,
        }
    }

    pub fn obs_dim(&self) -> usize {
        self.env.substeps * crate::env::FRAME_DIM
    }
}
