//! Reproductions of the two characteristic failures of a policy that was
//! trained on true state but runs on estimates: stochastic tipping of a
//! fixed rotation sequence, and drift of the weakly observed height.

use std::path::Path;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{eval_world, EvalBatch};
use crate::env::{sample_goal, write_csv, Mode, TactilePivot};
use crate::error::{Error, Result};
use crate::manifold::geodesic_distance;
use crate::trainer::{Agent, TrainMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum FailureCase {
    Tipping,
    Drift,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TippingRow {
    pub repeat: usize,
    pub t: f64,
    /// Distance to the goal of the recorded sequence, rad.
    pub angle: f64,
    pub engaged: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftRow {
    pub repeat: usize,
    pub t: f64,
    pub x3_true: f64,
    pub x3_est: f64,
    pub angle: f64,
    pub goal_index: usize,
}

fn require_naive(agent: &Agent) -> Result<()> {
    if agent.cfg.mode != TrainMode::Naive {
        return Err(Error::Invalid(format!("failure demos need a naive checkpoint, got `{}`", agent.cfg.mode)));
    }
    Ok(())
}

/// Records one closed-loop goal interval per goal with the policy on its
/// own estimates, keeps the one with the most steps held by fewer than
/// three fingers, and replays that action sequence open loop from the same
/// initial state under `repeats` different noise streams.
pub fn tipping_demo(agent: &Agent, seed: u64, repeats: usize) -> Result<Vec<TippingRow>> {
    require_naive(agent)?;
    let world = eval_world(agent, agent.cfg.env.clone())?;
    let dt = world.cfg.control_dt;
    let n = world.goals.len();
    let envs: Vec<TactilePivot> = (0..n).map(|g| TactilePivot::new(Arc::clone(&world), g, seed, Mode::Eval)).collect();
    let goals: Vec<usize> = (0..n).collect();
    let mut batch = EvalBatch::new(agent, false, envs, Some(&goals));
    let starts: Vec<_> = batch.envs.iter().map(|e| e.snapshot()).collect();
    let targets: Vec<_> = batch.envs.iter().map(|e| e.state().goal).collect();
    let mut actions = vec![Vec::new(); n];
    let mut loose = vec![0usize; n];
    for _ in 0..world.cfg.goal_steps {
        for (i, _, o) in batch.step(&mut Vec::new())? {
            actions[i].push(batch.actions[i].clone());
            match o {
                Ok(o) => {
                    loose[i] += (o.engaged < 3) as usize;
                    if o.flags.dropped {
                        batch.alive[i] = false;
                    }
                }
                Err(_) => batch.alive[i] = false,
            }
        }
    }
    let pick = (0..n).max_by_key(|&i| (loose[i], std::cmp::Reverse(i))).unwrap_or(0);
    let (start, goal, actions) = (starts[pick].clone(), targets[pick], &actions[pick]);

    let mut rows = Vec::new();
    for k in 0..repeats {
        let mut env = TactilePivot::new(Arc::clone(&world), pick, seed, Mode::Eval);
        env.restore(start.clone());
        *env.rng_mut() = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1 + k as u64));
        rows.push(TippingRow { repeat: k, t: 0.0, angle: geodesic_distance(env.state().r, goal), engaged: 4 });
        for (s, a) in actions.iter().enumerate() {
            let Ok(o) = env.step(a) else { break };
            rows.push(TippingRow { repeat: k, t: (s + 1) as f64 * dt, angle: geodesic_distance(env.state().r, goal), engaged: o.engaged });
            if o.flags.dropped {
                break;
            }
        }
    }
    Ok(rows)
}

/// Closed-loop rotation-goal sequence of `duration` seconds on estimates
/// alone. Goals change on success or timeout; a repeat ends on a drop.
pub fn drift_demo(agent: &Agent, seed: u64, repeats: usize, duration: f64) -> Result<Vec<DriftRow>> {
    require_naive(agent)?;
    let mut env_cfg = agent.cfg.env.clone();
    let steps = (duration / env_cfg.control_dt).round() as u32;
    env_cfg.max_steps = env_cfg.max_steps.max(steps + 1);
    let world = eval_world(agent, env_cfg)?;
    let dt = world.cfg.control_dt;
    let envs: Vec<TactilePivot> = (0..repeats).map(|k| TactilePivot::new(Arc::clone(&world), k, seed, Mode::Eval)).collect();
    let mut batch = EvalBatch::new(agent, false, envs, None);
    let mut rows: Vec<DriftRow> = (0..repeats)
        .map(|k| {
            let s = batch.envs[k].state();
            DriftRow { repeat: k, t: 0.0, x3_true: s.x[2], x3_est: batch.est[k].x[2], angle: geodesic_distance(s.r, s.goal), goal_index: s.goal_index }
        })
        .collect();
    let mut goal_rng = ChaCha8Rng::seed_from_u64(seed);
    for s in 0..steps {
        for (i, _, o) in batch.step(&mut Vec::new())? {
            match o {
                Ok(o) if o.flags.dropped => batch.alive[i] = false,
                Ok(o) => {
                    if o.flags.goal_timeout {
                        let next = sample_goal(&mut goal_rng, world.goals.len(), Some(batch.envs[i].state().goal_index));
                        batch.envs[i].begin_interval(next);
                    }
                    let st = batch.envs[i].state();
                    rows.push(DriftRow {
                        repeat: i,
                        t: (s + 1) as f64 * dt,
                        x3_true: st.x[2],
                        x3_est: batch.est[i].x[2],
                        angle: geodesic_distance(st.r, st.goal),
                        goal_index: st.goal_index,
                    });
                }
                Err(_) => batch.alive[i] = false,
            }
        }
    }
    rows.sort_by_key(|r| r.repeat);
    Ok(rows)
}

/// Last recorded angle of every repeat.
pub fn final_angles(rows: &[TippingRow]) -> Vec<f64> {
    let mut last: Vec<(usize, f64)> = Vec::new();
    for r in rows {
        match last.last_mut() {
            Some((k, a)) if *k == r.repeat => *a = r.angle,
            _ => last.push((r.repeat, r.angle)),
        }
    }
    last.into_iter().map(|(_, a)| a).collect()
}

/// Mean |x̂₃ − x₃| per time step across repeats that are still running.
pub fn drift_error_curve(rows: &[DriftRow]) -> Vec<(f64, f64)> {
    let mut by_t: std::collections::BTreeMap<u64, (f64, usize)> = std::collections::BTreeMap::new();
    for r in rows {
        let e = by_t.entry((r.t * 1000.0).round() as u64).or_insert((0.0, 0));
        e.0 += (r.x3_est - r.x3_true).abs();
        e.1 += 1;
    }
    by_t.into_iter().map(|(t, (s, n))| (t as f64 / 1000.0, s / n as f64)).collect()
}

/// Least-squares slope of `y` against `x`.
pub fn trend_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    if n < 2.0 {
        return 0.0;
    }
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx > 0.0 {
        sxy / sxx
    } else {
        0.0
    }
}

pub fn write_tipping(path: &Path, rows: &[TippingRow]) -> Result<()> {
    write_csv(path, rows)
}

pub fn write_drift(path: &Path, rows: &[DriftRow]) -> Result<()> {
    write_csv(path, rows)
}
