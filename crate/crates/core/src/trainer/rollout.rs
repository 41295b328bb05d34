use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::{check_termination, Mode, ObjectState, VecEnv, N_DOF};
use crate::error::Result;
use crate::estimator::{init_estimate, Estimate, EstimatorNet, SequenceData, SequenceStep};
use crate::manifold::geodesic_distance;
use crate::nn::Matrix;
use crate::policy::{gae, ActorCritic, PolicyInput, PpoBatch};

/// Per-environment recursion state carried across rollout segments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvRunner {
    pub obs: Vec<f64>,
    /// Estimate for the current step, as it will be fed to the policy.
    pub est: Estimate,
    /// Estimate of the previous step, the recursion's input.
    pub est_prev: Estimate,
    pub truth_prev: ObjectState,
    pub u_prev: Vec<f64>,
    /// The current step is the first of an episode.
    pub first: bool,
    pub episode_len: u32,
}

impl EnvRunner {
    pub fn fresh(obs: Vec<f64>, truth: ObjectState, latent_dim: usize) -> Self {
        let est = init_estimate(&truth, latent_dim);
        EnvRunner { obs, est_prev: est.clone(), est, truth_prev: truth, u_prev: vec![0.0; N_DOF], first: true, episode_len: 0 }
    }
}

/// One control step of every environment.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutStep {
    pub z: Matrix,
    pub u_prev: Matrix,
    pub truth: Vec<ObjectState>,
    /// State actually given to the policy.
    pub fed: Vec<ObjectState>,
    pub fed_truth: Vec<bool>,
    pub episode_start: Vec<bool>,
    pub goal: Vec<usize>,
    /// Unnormalized policy inputs.
    pub raw_inputs: Matrix,
    /// Normalized policy inputs.
    pub inputs: Matrix,
    pub raw_actions: Matrix,
    pub actions: Matrix,
    pub logprob: Vec<f64>,
    pub value: Vec<f64>,
    pub reward: Vec<f64>,
    pub done: Vec<bool>,
    pub valid: Vec<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct RolloutStats {
    pub steps: usize,
    pub reward_sum: f64,
    pub episodes: usize,
    pub episode_len_sum: u64,
    pub goal_successes: usize,
    pub goal_timeouts: usize,
    pub drops: usize,
    pub divergences: usize,
    pub faults: usize,
    /// Geodesic error of raw estimator predictions against ground truth.
    pub est_err_sum: f64,
    pub est_err_n: usize,
    /// Ground-truth policy inputs outside episode starts.
    pub truth_fed_mid_episode: usize,
    pub mid_episode_steps: usize,
}

/// Time-major on-policy data of one collection phase.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutBuffer {
    pub steps: Vec<RolloutStep>,
    /// Estimates before the first step, for the estimator unroll.
    pub start: Vec<Estimate>,
    pub start_truth: Vec<ObjectState>,
    /// Per-environment coin outcome: ground truth for the whole segment.
    pub coin: Vec<bool>,
    pub last_value: Vec<f64>,
    pub stats: RolloutStats,
}

impl RolloutBuffer {
    pub fn n_envs(&self) -> usize {
        self.coin.len()
    }

    /// Valid samples.
    pub fn len(&self) -> usize {
        self.steps.iter().map(|s| s.valid.iter().filter(|v| **v).count()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn to_sequences(&self) -> SequenceData {
        SequenceData {
            start: self.start.clone(),
            start_truth: self.start_truth.clone(),
            steps: self
                .steps
                .iter()
                .map(|s| SequenceStep {
                    z: s.z.clone(),
                    u_prev: s.u_prev.clone(),
                    truth: s.truth.clone(),
                    reset: s.episode_start.clone(),
                    valid: s.valid.clone(),
                })
                .collect(),
        }
    }

    /// Advantages per environment, flattened over valid samples.
    pub fn to_ppo_batch(&self, gamma: f64, tau: f64, reward_scale: f64) -> PpoBatch {
        let n = self.n_envs();
        let t_len = self.steps.len();
        let mut adv = vec![vec![0.0; t_len]; n];
        let mut ret = vec![vec![0.0; t_len]; n];
        for i in 0..n {
            let r: Vec<f64> = self.steps.iter().map(|s| s.reward[i] * reward_scale).collect();
            let v: Vec<f64> = self.steps.iter().map(|s| s.value[i]).collect();
            let d: Vec<bool> = self.steps.iter().map(|s| s.done[i]).collect();
            let (a, g) = gae(&r, &v, &d, self.last_value[i], gamma, tau);
            adv[i] = a;
            ret[i] = g;
        }
        let mut b = PpoBatch::default();
        let mut inputs = Vec::new();
        let mut raw = Vec::new();
        let mut rows = 0;
        for (t, s) in self.steps.iter().enumerate() {
            for i in 0..n {
                if !s.valid[i] {
                    continue;
                }
                inputs.extend_from_slice(s.inputs.row(i));
                raw.extend_from_slice(s.raw_actions.row(i));
                b.logprob.push(s.logprob[i]);
                b.values.push(s.value[i]);
                b.advantages.push(adv[i][t]);
                b.returns.push(ret[i][t]);
                rows += 1;
            }
        }
        let cols = self.steps.first().map_or(0, |s| s.inputs.cols);
        let acols = self.steps.first().map_or(0, |s| s.raw_actions.cols);
        b.inputs = Matrix::from_vec(rows, cols, inputs);
        b.raw_actions = Matrix::from_vec(rows, acols, raw);
        b
    }

    /// Unnormalized inputs of valid samples, for the running statistics.
    pub fn valid_raw_inputs(&self) -> Matrix {
        let cols = self.steps.first().map_or(0, |s| s.raw_inputs.cols);
        let mut data = Vec::new();
        let mut rows = 0;
        for s in &self.steps {
            for (i, v) in s.valid.iter().enumerate() {
                if *v {
                    data.extend_from_slice(s.raw_inputs.row(i));
                    rows += 1;
                }
            }
        }
        Matrix::from_vec(rows, cols, data)
    }
}

fn policy_inputs(runners: &[EnvRunner], fed: &[ObjectState], venv: &VecEnv) -> Result<Matrix> {
    let inputs: Vec<PolicyInput> = runners
        .iter()
        .zip(fed)
        .zip(&venv.envs)
        .map(|((r, s), e)| PolicyInput::new(&r.obs, s, e.state().goal))
        .collect();
    PolicyInput::batch(&inputs)
}

fn fed_states(runners: &[EnvRunner], venv: &VecEnv, coin: &[bool]) -> (Vec<ObjectState>, Vec<bool>) {
    let mut fed = Vec::with_capacity(runners.len());
    let mut truth_fed = Vec::with_capacity(runners.len());
    for ((r, e), c) in runners.iter().zip(&venv.envs).zip(coin) {
        let use_truth = *c || r.first;
        fed.push(if use_truth { e.state().object() } else { r.est.object() });
        truth_fed.push(use_truth);
    }
    (fed, truth_fed)
}

/// Collects `t_len` steps from every environment.
///
/// Each environment draws one coin per segment; with probability `rho` it
/// sees ground truth for the whole segment. Episode starts always see the
/// known initial state. The estimator recursion runs regardless, and when
/// ground truth is fed it restarts from it, keeping its own latent.
#[allow(clippy::too_many_arguments)]
pub fn collect_rollout(
    ac: &ActorCritic,
    f: &EstimatorNet,
    venv: &mut VecEnv,
    runners: &mut [EnvRunner],
    rho: f64,
    t_len: usize,
    rng: &mut impl Rng,
) -> Result<RolloutBuffer> {
    let n = venv.len();
    let latent = f.latent_dim;
    let coin: Vec<bool> = (0..n).map(|_| rng.random::<f64>() < rho).collect();
    let start = runners.iter().map(|r| r.est_prev.clone()).collect();
    let start_truth = runners.iter().map(|r| r.truth_prev).collect();
    let mut stats = RolloutStats::default();
    let mut steps = Vec::with_capacity(t_len);
    for _ in 0..t_len {
        let truth: Vec<ObjectState> = venv.envs.iter().map(|e| e.state().object()).collect();
        let (fed, fed_truth) = fed_states(runners, venv, &coin);
        let raw_inputs = policy_inputs(runners, &fed, venv)?;
        let act = ac.act(&raw_inputs, rng, false)?;
        let outcomes = venv.step(&act.actions);

        let z = Matrix::from_rows(&runners.iter().map(|r| r.obs.clone()).collect::<Vec<_>>());
        let u_prev = Matrix::from_rows(&runners.iter().map(|r| r.u_prev.clone()).collect::<Vec<_>>());
        let episode_start: Vec<bool> = runners.iter().map(|r| r.first).collect();
        let goal = venv.envs.iter().map(|e| e.state().goal_index).collect();
        let mut reward = vec![0.0; n];
        let mut done = vec![false; n];
        let mut valid = vec![true; n];
        let mut next_obs: Vec<Vec<f64>> = Vec::with_capacity(n);
        for (i, out) in outcomes.into_iter().enumerate() {
            if !episode_start[i] {
                stats.mid_episode_steps += 1;
                if fed_truth[i] {
                    stats.truth_fed_mid_episode += 1;
                }
            }
            match out {
                Ok(o) => {
                    reward[i] = o.reward;
                    done[i] = o.flags.done();
                    stats.steps += 1;
                    stats.reward_sum += o.reward;
                    stats.goal_successes += o.flags.goal_success as usize;
                    stats.goal_timeouts += o.flags.goal_timeout as usize;
                    stats.drops += o.flags.dropped as usize;
                    next_obs.push(o.obs.data);
                }
                Err(_) => {
                    valid[i] = false;
                    done[i] = true;
                    stats.faults += 1;
                    next_obs.push(runners[i].obs.clone());
                }
            }
        }

        // recursion for the next step
        let prev: Vec<Estimate> = runners.iter().map(|r| r.est.clone()).collect();
        let pred = f.predict_batch(&Matrix::from_rows(&next_obs), &act.actions, &prev)?;
        for (i, p) in pred.into_iter().enumerate() {
            let r = &mut runners[i];
            r.episode_len += 1;
            if !done[i] {
                let state = venv.envs[i].state();
                let now = state.object();
                stats.est_err_sum += geodesic_distance(p.r, now.r);
                stats.est_err_n += 1;
                let next = if coin[i] { Estimate { x: now.x, r: now.r, v: now.v, w: now.w, latent: p.latent } } else { p };
                if !coin[i] && check_termination(state, Some(&next), Mode::Train, &venv.envs[i].world().cfg).estimator_divergence {
                    done[i] = true;
                    stats.divergences += 1;
                } else {
                    r.est_prev = std::mem::replace(&mut r.est, next);
                    r.truth_prev = truth[i];
                    r.obs = std::mem::take(&mut next_obs[i]);
                    r.u_prev = act.actions.row(i).to_vec();
                    r.first = false;
                    continue;
                }
            }
            stats.episodes += 1;
            stats.episode_len_sum += r.episode_len as u64;
            let obs = venv.envs[i].reset().data;
            *r = EnvRunner::fresh(obs, venv.envs[i].state().object(), latent);
        }

        steps.push(RolloutStep {
            z,
            u_prev,
            truth,
            fed,
            fed_truth,
            episode_start,
            goal,
            raw_inputs,
            inputs: act.inputs,
            raw_actions: act.raw,
            actions: act.actions,
            logprob: act.raw_logprob,
            value: act.value,
            reward,
            done,
            valid,
        });
    }
    let (fed, _) = fed_states(runners, venv, &coin);
    let last_value = ac.value(&policy_inputs(runners, &fed, venv)?)?;
    Ok(RolloutBuffer { steps, start, start_truth, coin, last_value, stats })
}
