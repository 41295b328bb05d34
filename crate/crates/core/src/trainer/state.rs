use std::fs::{File, OpenOptions};
use std::path::Path;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::rollout::{collect_rollout, EnvRunner, RolloutBuffer};
use super::TrainConfig;
use crate::env::{EnvSnapshot, Mode, ObjectSpec, VecEnv, World, N_DOF};
use crate::error::{Error, Result};
use crate::estimator::{Estimator, EstimatorMetrics, EstimatorNet};
use crate::nn::{Adam, Checkpoint, OptimizerState};
use crate::policy::{ppo_update, ActorCritic, PolicyInput, PpoMetrics, RunningNorm};

const KIND: &str = "ecrl-train";

/// One row of the training metrics CSV.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct IterationMetrics {
    pub iteration: u64,
    pub rho: f64,
    pub samples: usize,
    pub reward_mean: f64,
    pub episodes: usize,
    pub episode_length: f64,
    /// Goal intervals that ended on target, among all that ended.
    pub success_rate: f64,
    pub drops: usize,
    pub divergences: usize,
    pub faults: usize,
    pub truth_fed_fraction: f64,
    pub est_rot_err: f64,
    pub est_loss: f64,
    pub est_steps: usize,
    pub est_clipped: usize,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub approx_kl: f64,
    pub clip_fraction: f64,
    pub lr: f64,
    pub ppo_steps: usize,
}

/// A trained policy and estimator, as needed for evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct Agent {
    pub cfg: TrainConfig,
    pub ac: ActorCritic,
    pub f: EstimatorNet,
}

impl Agent {
    pub fn load(path: &Path) -> Result<Agent> {
        let ck = Checkpoint::load(path)?;
        if ck.kind != KIND {
            return Err(Error::checkpoint(path, format!("expected a `{KIND}` checkpoint, found `{}`", ck.kind)));
        }
        let meta: Meta = serde_json::from_value(ck.meta.clone()).map_err(|e| Error::checkpoint(path, e.to_string()))?;
        let (ac, f) = networks(&ck, &meta)?;
        Ok(Agent { cfg: meta.config, ac, f })
    }
}

#[derive(Serialize, Deserialize)]
struct Meta {
    config: TrainConfig,
    iteration: u64,
    lr: f64,
    norm: RunningNorm,
    rollout_rng: ChaCha8Rng,
    est_rng: ChaCha8Rng,
    ppo_rng: ChaCha8Rng,
    runners: Vec<EnvRunner>,
    envs: Vec<EnvSnapshot>,
}

fn networks(ck: &Checkpoint, meta: &Meta) -> Result<(ActorCritic, EstimatorNet)> {
    let cfg = &meta.config;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut ac = ActorCritic::new(PolicyInput::dim_for(cfg.obs_dim()), N_DOF, &cfg.policy, &mut rng)?;
    ac.pi.set_params(ck.group("policy.pi")?)?;
    ac.vf.set_params(ck.group("policy.vf")?)?;
    let ls = ck.group("policy.log_std")?.remove(0);
    if ls.shape() != ac.head.log_std.shape() {
        return Err(Error::Dimension { what: "policy log-std", expected: ac.head.log_std.len(), got: ls.len() });
    }
    ac.head.log_std = ls;
    if meta.norm.dim() != ac.input_dim() {
        return Err(Error::Dimension { what: "policy normalizer", expected: ac.input_dim(), got: meta.norm.dim() });
    }
    ac.norm = meta.norm.clone();
    let mut f = EstimatorNet::new(cfg.obs_dim(), &cfg.estimator, &mut rng);
    f.net.set_params(ck.group("estimator.net")?)?;
    Ok((ac, f))
}

/// Everything a run needs to continue: networks, optimizers, schedule,
/// RNG streams and the environments themselves.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub cfg: TrainConfig,
    pub world: Arc<World>,
    pub venv: VecEnv,
    pub runners: Vec<EnvRunner>,
    pub ac: ActorCritic,
    pub policy_opt: Adam,
    pub lr: f64,
    pub estimator: Estimator,
    pub iteration: u64,
    rollout_rng: ChaCha8Rng,
    est_rng: ChaCha8Rng,
    ppo_rng: ChaCha8Rng,
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(id);
    r
}

impl TrainState {
    pub fn new(cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let world = World::new(cfg.env.clone(), ObjectSpec::preset(&cfg.object)?)?;
        let mut init_rng = stream(cfg.seed, 1);
        let ac = ActorCritic::new(PolicyInput::dim_for(cfg.obs_dim()), N_DOF, &cfg.policy, &mut init_rng)?;
        let estimator = Estimator::new(cfg.obs_dim(), cfg.estimator.clone(), &mut init_rng)?;
        let policy_opt = Adam::for_params(ac.params());
        let mut venv = VecEnv::new(Arc::clone(&world), cfg.n_envs, cfg.seed, Mode::Train, cfg.workers);
        let latent = cfg.estimator.latent_dim;
        let runners = venv
            .envs
            .iter_mut()
            .map(|e| {
                let obs = e.reset().data;
                EnvRunner::fresh(obs, e.state().object(), latent)
            })
            .collect();
        Ok(TrainState {
            lr: cfg.ppo.lr,
            cfg: cfg.clone(),
            world,
            venv,
            runners,
            ac,
            policy_opt,
            estimator,
            iteration: 0,
            rollout_rng: stream(cfg.seed, 2),
            est_rng: stream(cfg.seed, 3),
            ppo_rng: stream(cfg.seed, 4),
        })
    }

    /// Starts from a previously trained agent's networks, keeping this
    /// run's schedule and environments. Used to seed closed-loop estimator
    /// adaptation from a converged ground-truth policy.
    pub fn adopt(&mut self, agent: &Agent) -> Result<()> {
        if agent.ac.input_dim() != self.ac.input_dim() || agent.f.obs_dim != self.estimator.f.obs_dim || agent.f.latent_dim != self.estimator.f.latent_dim {
            return Err(Error::Invalid("adopted agent was trained with different dimensions".into()));
        }
        if agent.ac.pi.hidden != self.ac.pi.hidden || agent.f.net.hidden != self.estimator.f.net.hidden {
            return Err(Error::Invalid("adopted agent has a different architecture".into()));
        }
        self.ac = agent.ac.clone();
        self.estimator.f = agent.f.clone();
        self.policy_opt = Adam::for_params(self.ac.params());
        self.estimator.opt = Adam::for_params(self.estimator.f.net.params());
        Ok(())
    }

    pub fn rho(&self) -> f64 {
        self.cfg.rho_at(self.iteration)
    }

    pub fn agent(&self) -> Agent {
        Agent { cfg: self.cfg.clone(), ac: self.ac.clone(), f: self.estimator.f.clone() }
    }

    pub fn collect(&mut self) -> Result<RolloutBuffer> {
        let rho = self.rho();
        collect_rollout(&self.ac, &self.estimator.f, &mut self.venv, &mut self.runners, rho, self.cfg.rollout_len, &mut self.rollout_rng)
    }

    /// Collect, update the estimator, update the policy, advance ρ.
    pub fn train_iteration(&mut self) -> Result<IterationMetrics> {
        let it = self.iteration;
        let wrap = |e: Error| Error::Invalid(format!("iteration {it}: {e}"));
        let rho = self.rho();
        let buf = self.collect().map_err(wrap)?;
        let est = if self.cfg.mode.trains_estimator() {
            self.estimator.train_epoch(&buf.to_sequences(), &mut self.est_rng).map_err(wrap)?
        } else {
            EstimatorMetrics::default()
        };
        let ppo = if self.cfg.mode.trains_policy() && !buf.is_empty() {
            let batch = buf.to_ppo_batch(self.cfg.ppo.gamma, self.cfg.ppo.tau, self.cfg.reward_scale);
            let m = ppo_update(&mut self.ac, &mut self.policy_opt, &mut self.lr, &batch, &self.cfg.ppo, &mut self.ppo_rng)
                .map_err(wrap)?;
            self.ac.norm.update(&buf.valid_raw_inputs());
            m
        } else {
            PpoMetrics { lr: self.lr, ..PpoMetrics::default() }
        };
        self.iteration += 1;

        let s = &buf.stats;
        let ratio = |a: f64, b: f64| if b > 0.0 { a / b } else { 0.0 };
        Ok(IterationMetrics {
            iteration: it,
            rho,
            samples: buf.len(),
            reward_mean: ratio(s.reward_sum, s.steps as f64),
            episodes: s.episodes,
            episode_length: ratio(s.episode_len_sum as f64, s.episodes as f64),
            success_rate: ratio(s.goal_successes as f64, (s.goal_successes + s.goal_timeouts) as f64),
            drops: s.drops,
            divergences: s.divergences,
            faults: s.faults,
            truth_fed_fraction: ratio(s.truth_fed_mid_episode as f64, s.mid_episode_steps as f64),
            est_rot_err: ratio(s.est_err_sum, s.est_err_n as f64),
            est_loss: est.mean_loss,
            est_steps: est.steps,
            est_clipped: est.clipped,
            policy_loss: ppo.policy_loss,
            value_loss: ppo.value_loss,
            entropy: ppo.entropy,
            approx_kl: ppo.approx_kl,
            clip_fraction: ppo.clip_fraction,
            lr: ppo.lr,
            ppo_steps: ppo.steps,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut ck = Checkpoint::new(KIND);
        ck.push_group("policy.pi", self.ac.pi.params());
        ck.push_group("policy.log_std", std::slice::from_ref(&self.ac.head.log_std));
        ck.push_group("policy.vf", self.ac.vf.params());
        ck.push_group("estimator.net", self.estimator.f.net.params());
        ck.optimizers.push(OptimizerState::capture("policy", &self.policy_opt, self.lr));
        ck.optimizers.push(OptimizerState::capture("estimator", &self.estimator.opt, self.estimator.cfg.lr));
        let meta = Meta {
            config: self.cfg.clone(),
            iteration: self.iteration,
            lr: self.lr,
            norm: self.ac.norm.clone(),
            rollout_rng: self.rollout_rng.clone(),
            est_rng: self.est_rng.clone(),
            ppo_rng: self.ppo_rng.clone(),
            runners: self.runners.clone(),
            envs: self.venv.envs.iter().map(|e| e.snapshot()).collect(),
        };
        ck.meta = serde_json::to_value(meta)?;
        ck.save(path)
    }

    /// Rebuilds a saved run; nothing is returned unless every part loads.
    pub fn restore(path: &Path) -> Result<Self> {
        let ck = Checkpoint::load(path)?;
        if ck.kind != KIND {
            return Err(Error::checkpoint(path, format!("expected a `{KIND}` checkpoint, found `{}`", ck.kind)));
        }
        let meta: Meta = serde_json::from_value(ck.meta.clone()).map_err(|e| Error::checkpoint(path, e.to_string()))?;
        let (ac, f) = networks(&ck, &meta)?;
        let mut st = TrainState::new(meta.config.clone())?;
        if meta.runners.len() != st.cfg.n_envs || meta.envs.len() != st.cfg.n_envs {
            return Err(Error::checkpoint(path, "environment count does not match the stored config"));
        }
        let opt = |group: &str| -> Result<&OptimizerState> {
            ck.optimizer(group).ok_or_else(|| Error::checkpoint(path, format!("missing optimizer `{group}`")))
        };
        st.policy_opt = opt("policy")?.restore()?;
        st.estimator.opt = opt("estimator")?.restore()?;
        st.ac = ac;
        st.estimator.f = f;
        st.lr = meta.lr;
        st.iteration = meta.iteration;
        st.rollout_rng = meta.rollout_rng;
        st.est_rng = meta.est_rng;
        st.ppo_rng = meta.ppo_rng;
        st.runners = meta.runners;
        for (e, s) in st.venv.envs.iter_mut().zip(meta.envs) {
            e.restore(s);
        }
        Ok(st)
    }
}

/// Appends metrics rows to a CSV file, writing the header once.
pub struct MetricsLog {
    writer: csv::Writer<File>,
}

impl MetricsLog {
    pub fn open(path: &Path) -> Result<Self> {
        let exists = path.exists() && std::fs::metadata(path)?.len() > 0;
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        let writer = csv::WriterBuilder::new().has_headers(!exists).from_writer(file);
        Ok(MetricsLog { writer })
    }

    pub fn write(&mut self, row: &IterationMetrics) -> Result<()> {
        self.writer.serialize(row).map_err(crate::env::trajectory::csv_err)?;
        self.writer.flush()?;
        Ok(())
    }
}
