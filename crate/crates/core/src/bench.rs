//! Evaluation harness: the 24-goal reorientation benchmark, final-angle
//! distributions, estimator error and the consecutive-reorientation test.
//!
//! Every trial gets its own environment on an evaluation seed, so domain
//! randomization is resampled per trial and never overlaps training
//! streams. Policies act deterministically (the action mean).

use std::path::Path;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{write_csv, EnvConfig, Mode, ObjectSpec, ObjectState, TactilePivot, World};
use crate::error::{Error, Result};
use crate::estimator::{init_estimate, Estimate};
use crate::manifold::geodesic_distance;
use crate::nn::Matrix;
use crate::policy::PolicyInput;
use crate::trainer::{Agent, TrainMode};

/// Offset that keeps evaluation streams away from training seeds.
pub const EVAL_SEED_OFFSET: u64 = 0x5EED_0000_0000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub n_trials: usize,
    pub seed: u64,
    pub consecutive_trials: usize,
    pub consecutive_cap: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig { n_trials: 50, seed: 1, consecutive_trials: 10, consecutive_cap: 100 }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_trials == 0 {
            return Err(Error::config("bench.n_trials", "must be positive"));
        }
        if self.consecutive_cap == 0 {
            return Err(Error::config("bench.consecutive_cap", "must be positive"));
        }
        Ok(())
    }

    fn eval_seed(&self) -> u64 {
        EVAL_SEED_OFFSET ^ self.seed
    }
}

/// What the policy is given: ground truth only in oracle mode.
pub fn feeds_truth(mode: TrainMode) -> bool {
    mode == TrainMode::Oracle
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub goal_index: usize,
    pub trial: usize,
    pub success: bool,
    pub dropped: bool,
    pub final_angle: f64,
    pub est_err_sum: f64,
    pub est_steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoalResult {
    pub goal_index: usize,
    pub trials: usize,
    pub successes: usize,
    pub success_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub mode: String,
    pub object: String,
    pub n_trials: usize,
    pub per_goal: Vec<GoalResult>,
    /// Success rate `B` in percent.
    pub success_rate: f64,
    /// Mean geodesic estimator error over every evaluation step, radians.
    pub est_error_mean: f64,
    pub est_error_std: f64,
    pub est_error_averaging: String,
    pub trials: Vec<TrialResult>,
}

impl BenchmarkReport {
    /// Order-independent reduction of trial results.
    pub fn from_trials(mode: &str, object: &str, n_goals: usize, mut trials: Vec<TrialResult>, step_errors: &[f64]) -> Self {
        trials.sort_by_key(|t| (t.goal_index, t.trial));
        let per_goal: Vec<GoalResult> = (0..n_goals)
            .map(|g| {
                let of_goal: Vec<&TrialResult> = trials.iter().filter(|t| t.goal_index == g).collect();
                let successes = of_goal.iter().filter(|t| t.success).count();
                let n = of_goal.len();
                GoalResult { goal_index: g, trials: n, successes, success_rate: if n > 0 { 100.0 * successes as f64 / n as f64 } else { 0.0 } }
            })
            .collect();
        let total = trials.len().max(1);
        let successes = trials.iter().filter(|t| t.success).count();
        let (mean, std) = mean_std(step_errors);
        BenchmarkReport {
            mode: mode.into(),
            object: object.into(),
            n_trials: trials.len() / n_goals.max(1),
            per_goal,
            success_rate: 100.0 * successes as f64 / total as f64,
            est_error_mean: mean,
            est_error_std: std,
            est_error_averaging: "per-step mean over all benchmark rollouts".into(),
            trials,
        }
    }

    pub fn final_angles(&self) -> Vec<f64> {
        self.trials.iter().map(|t| t.final_angle).collect()
    }

    /// Writes `report.json`, `per_goal.csv` and `final_angles.csv`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("report.json"), serde_json::to_vec_pretty(self)?)?;
        #[derive(Serialize)]
        struct GoalRow<'a> {
            goal_index: usize,
            success_rate: f64,
            mode: &'a str,
            object: &'a str,
        }
        #[derive(Serialize)]
        struct AngleRow<'a> {
            goal_index: usize,
            trial: usize,
            final_angle: f64,
            mode: &'a str,
            object: &'a str,
        }
        let goals: Vec<GoalRow> = self
            .per_goal
            .iter()
            .map(|g| GoalRow { goal_index: g.goal_index, success_rate: g.success_rate, mode: &self.mode, object: &self.object })
            .collect();
        write_csv(&dir.join("per_goal.csv"), &goals)?;
        let angles: Vec<AngleRow> = self
            .trials
            .iter()
            .map(|t| AngleRow { goal_index: t.goal_index, trial: t.trial, final_angle: t.final_angle, mode: &self.mode, object: &self.object })
            .collect();
        write_csv(&dir.join("final_angles.csv"), &angles)
    }
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (0.0, 0.0);
    }
    let m = v.iter().sum::<f64>() / v.len() as f64;
    let s = (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64).sqrt();
    (m, s)
}

/// Closed-loop evaluation state of a batch of environments.
struct EvalBatch<'a> {
    agent: &'a Agent,
    truth: bool,
    envs: Vec<TactilePivot>,
    obs: Vec<Vec<f64>>,
    est: Vec<Estimate>,
    first: Vec<bool>,
    alive: Vec<bool>,
    /// Last joint targets applied to each environment.
    actions: Vec<Vec<f64>>,
}

impl<'a> EvalBatch<'a> {
    fn new(agent: &'a Agent, truth: bool, mut envs: Vec<TactilePivot>, goals: Option<&[usize]>) -> Self {
        let latent = agent.f.latent_dim;
        let obs: Vec<Vec<f64>> = envs
            .iter_mut()
            .enumerate()
            .map(|(i, e)| match goals {
                Some(g) => e.reset_with_goal(g[i]).data,
                None => e.reset().data,
            })
            .collect();
        let est = envs.iter().map(|e| init_estimate(&e.state().object(), latent)).collect();
        let n = envs.len();
        EvalBatch { agent, truth, envs, obs, est, first: vec![true; n], alive: vec![true; n], actions: vec![Vec::new(); n] }
    }

    fn live(&self) -> Vec<usize> {
        (0..self.envs.len()).filter(|i| self.alive[*i]).collect()
    }

    /// Acts and steps every live environment. Returns, per live env, the
    /// goal it was pursuing and the step outcome (or a fault).
    fn step(&mut self, step_errors: &mut Vec<f64>) -> Result<Vec<(usize, crate::manifold::UnitQuaternion, Result<crate::env::StepOutcome>)>> {
        let live = self.live();
        if live.is_empty() {
            return Ok(Vec::new());
        }
        let mut inputs = Vec::with_capacity(live.len());
        for &i in &live {
            let truth = self.envs[i].state().object();
            let fed: ObjectState = if self.truth || self.first[i] { truth } else { self.est[i].object() };
            step_errors.push(geodesic_distance(self.est[i].r, truth.r));
            inputs.push(PolicyInput::new(&self.obs[i], &fed, self.envs[i].state().goal));
        }
        let x = PolicyInput::batch(&inputs)?;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let act = self.agent.ac.act(&x, &mut rng, true)?;
        let mut out = Vec::with_capacity(live.len());
        let mut next_obs = Vec::with_capacity(live.len());
        for (k, &i) in live.iter().enumerate() {
            let goal = self.envs[i].state().goal;
            self.actions[i] = act.actions.row(k).to_vec();
            let o = self.envs[i].step(&self.actions[i]);
            next_obs.push(match &o {
                Ok(o) => o.obs.data.clone(),
                Err(_) => self.obs[i].clone(),
            });
            out.push((i, goal, o));
        }
        let prev: Vec<Estimate> = live.iter().map(|&i| self.est[i].clone()).collect();
        let pred = self.agent.f.predict_batch(&Matrix::from_rows(&next_obs), &act.actions, &prev)?;
        for ((k, &i), p) in live.iter().enumerate().zip(pred) {
            self.est[i] = p;
            self.obs[i] = std::mem::take(&mut next_obs[k]);
            self.first[i] = false;
        }
        Ok(out)
    }
}

fn eval_world(agent: &Agent, env: EnvConfig) -> Result<Arc<World>> {
    World::new(env, ObjectSpec::preset(&agent.cfg.object)?)
}

/// Every goal `n_trials` times for one goal interval.
pub fn run_benchmark(agent: &Agent, mode: TrainMode, cfg: &BenchConfig) -> Result<BenchmarkReport> {
    cfg.validate()?;
    let world = eval_world(agent, agent.cfg.env.clone())?;
    let n_goals = world.goals.len();
    let n = n_goals * cfg.n_trials;
    let envs: Vec<TactilePivot> = (0..n).map(|id| TactilePivot::new(Arc::clone(&world), id, cfg.eval_seed(), Mode::Eval)).collect();
    let goals: Vec<usize> = (0..n).map(|id| id / cfg.n_trials).collect();
    let mut batch = EvalBatch::new(agent, feeds_truth(mode), envs, Some(&goals));
    let mut trials: Vec<Option<TrialResult>> = vec![None; n];
    let mut est_sum = vec![0.0; n];
    let mut est_n = vec![0usize; n];
    let mut step_errors = Vec::new();
    for _ in 0..world.cfg.goal_steps {
        let before = step_errors.len();
        let live = batch.live();
        let out = batch.step(&mut step_errors)?;
        for (k, &i) in live.iter().enumerate() {
            est_sum[i] += step_errors[before + k];
            est_n[i] += 1;
        }
        for (i, goal, o) in out {
            let finish = |success: bool, dropped: bool, angle: f64| TrialResult {
                goal_index: goals[i],
                trial: i % cfg.n_trials,
                success,
                dropped,
                final_angle: angle,
                est_err_sum: est_sum[i],
                est_steps: est_n[i],
            };
            match o {
                Ok(o) => {
                    let angle = geodesic_distance(batch.envs[i].state().r, goal);
                    if o.flags.goal_success || o.flags.goal_timeout || o.flags.done() {
                        trials[i] = Some(finish(o.flags.goal_success, o.flags.dropped, angle));
                        batch.alive[i] = false;
                    }
                }
                Err(_) => {
                    trials[i] = Some(finish(false, false, std::f64::consts::PI));
                    batch.alive[i] = false;
                }
            }
        }
    }
    let trials: Vec<TrialResult> = trials
        .into_iter()
        .enumerate()
        .map(|(i, t)| {
            t.unwrap_or_else(|| TrialResult {
                goal_index: goals[i],
                trial: i % cfg.n_trials,
                success: false,
                dropped: false,
                final_angle: geodesic_distance(batch.envs[i].state().r, batch.envs[i].state().goal),
                est_err_sum: est_sum[i],
                est_steps: est_n[i],
            })
        })
        .collect();
    Ok(BenchmarkReport::from_trials(mode.name(), &agent.cfg.object, n_goals, trials, &step_errors))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsecutiveReport {
    pub mode: String,
    pub object: String,
    pub cap: usize,
    pub counts: Vec<usize>,
    pub median: f64,
}

impl ConsecutiveReport {
    /// Counts in the bracketed list style, e.g. `[14, 12, 30]`.
    pub fn counts_list(&self) -> String {
        format!("[{}]", self.counts.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(", "))
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("consecutive.json"), serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }
}

pub fn median(v: &[usize]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    let mut s = v.to_vec();
    s.sort_unstable();
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2] as f64
    } else {
        (s[n / 2 - 1] + s[n / 2]) as f64 / 2.0
    }
}

/// Successive goals without any re-grounding of the estimate; each trial
/// stops at its first failed interval or after `cap` successes.
pub fn run_consecutive(agent: &Agent, mode: TrainMode, cfg: &BenchConfig) -> Result<ConsecutiveReport> {
    cfg.validate()?;
    let mut env = agent.cfg.env.clone();
    // the episode limit would otherwise cut long streaks
    env.max_steps = (cfg.consecutive_cap as u32 + 1) * env.goal_steps;
    let world = eval_world(agent, env)?;
    let n = cfg.consecutive_trials;
    let seed = cfg.eval_seed().wrapping_add(1);
    let envs: Vec<TactilePivot> = (0..n).map(|id| TactilePivot::new(Arc::clone(&world), id, seed, Mode::Eval)).collect();
    let mut batch = EvalBatch::new(agent, feeds_truth(mode), envs, None);
    let mut counts = vec![0usize; n];
    let mut scratch = Vec::new();
    while !batch.live().is_empty() {
        for (i, _, o) in batch.step(&mut scratch)? {
            match o {
                Ok(o) if o.flags.goal_success => {
                    counts[i] += 1;
                    if counts[i] >= cfg.consecutive_cap {
                        batch.alive[i] = false;
                    }
                }
                Ok(o) if !o.flags.done() => {}
                _ => batch.alive[i] = false,
            }
        }
        scratch.clear();
    }
    Ok(ConsecutiveReport { mode: mode.name().into(), object: agent.cfg.object.clone(), cap: cfg.consecutive_cap, median: median(&counts), counts })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quantiles {
    pub p5: f64,
    pub p25: f64,
    pub p50: f64,
    pub p75: f64,
    pub p95: f64,
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Box-plot quantiles of the benchmark's final angles.
pub fn final_angle_distribution(samples: &[f64]) -> Result<Quantiles> {
    if samples.len() < 20 {
        return Err(Error::TooFewSamples { needed: 20, got: samples.len() });
    }
    if samples.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite { what: "final angle", detail: "sample set".into() });
    }
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let q = |p| quantile_sorted(&s, p);
    Ok(Quantiles { p5: q(0.05), p25: q(0.25), p50: q(0.5), p75: q(0.75), p95: q(0.95) })
}

pub mod failure;
