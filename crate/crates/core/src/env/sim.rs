use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::config::{EnvConfig, RandomizationConfig};
use super::object::ObjectSpec;
use super::reward::{reward, Nominal};
use super::state::{Mode, Observation, SystemState, TerminationFlags, FRAME_DIM, N_DOF, N_FINGERS};
use crate::error::{Error, Result};
use crate::estimator::Estimate;
use crate::manifold::{geodesic_distance, octahedral_group, quat_compose, quat_exp, v3, Tangent3, UnitQuaternion, Vec3};

/// Fixed contact frames: lever directions `c_i` and tangent bases.
#[derive(Debug, Clone, PartialEq)]
pub struct Geometry {
    pub contact: [Vec3; N_FINGERS],
    /// `[t_a, t_b]` per finger with `t_b = c × t_a`.
    pub tangent: [[Vec3; 2]; N_FINGERS],
}

impl Geometry {
    pub fn new(tilt_deg: f64) -> Self {
        let tilt = tilt_deg.to_radians();
        let mut contact = [[0.0; 3]; N_FINGERS];
        let mut tangent = [[[0.0; 3]; 2]; N_FINGERS];
        for i in 0..N_FINGERS {
            let phi = i as f64 * std::f64::consts::FRAC_PI_2;
            let h = [phi.cos(), phi.sin(), 0.0];
            let c = [tilt.cos() * h[0], tilt.cos() * h[1], -tilt.sin()];
            let ta = [tilt.sin() * h[0], tilt.sin() * h[1], tilt.cos()];
            contact[i] = c;
            tangent[i] = [ta, v3::cross(c, ta)];
        }
        Geometry { contact, tangent }
    }
}

/// Per-environment randomization, drawn once at construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainRandomization {
    pub tip_scale: f64,
    pub obs_noise: f64,
    pub obs_bias: Vec<f64>,
    pub size_scale: f64,
    /// Multiplier on the target low-pass coefficient.
    pub control_gain: f64,
}

impl DomainRandomization {
    pub fn nominal() -> Self {
        DomainRandomization { tip_scale: 1.0, obs_noise: 0.0, obs_bias: vec![0.0; FRAME_DIM], size_scale: 1.0, control_gain: 1.0 }
    }

    pub fn sample(cfg: &RandomizationConfig, rng: &mut impl Rng) -> Self {
        let mut range = |r: [f64; 2]| if r[1] > r[0] { rng.random_range(r[0]..r[1]) } else { r[0] };
        let tip_scale = range(cfg.tip_scale);
        let obs_noise = range(cfg.obs_noise);
        let size_scale = range(cfg.size_scale);
        let b = cfg.obs_bias;
        let obs_bias = (0..FRAME_DIM).map(|_| if b > 0.0 { rng.random_range(-b..b) } else { 0.0 }).collect();
        let j = cfg.control_jitter;
        let control_gain = if j > 0.0 { 1.0 + rng.random_range(-j..j) } else { 1.0 };
        DomainRandomization { tip_scale, obs_noise, obs_bias, size_scale, control_gain }
    }
}

/// A stable initial grasp.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grasp {
    pub x: Vec3,
    pub r: UnitQuaternion,
}

const GRASP_SEED: u64 = 0x6772_6173_70;

/// Immutable data shared by all environments of one run.
#[derive(Debug, Clone)]
pub struct World {
    pub cfg: EnvConfig,
    pub object: ObjectSpec,
    pub geometry: Geometry,
    pub grasps: Vec<Grasp>,
    pub nominal: Nominal,
    pub goals: Vec<UnitQuaternion>,
}

impl World {
    pub fn new(cfg: EnvConfig, object: ObjectSpec) -> Result<Arc<Self>> {
        cfg.validate()?;
        object.validate()?;
        let geometry = Geometry::new(cfg.contact_tilt_deg);
        let mut rng = ChaCha8Rng::seed_from_u64(GRASP_SEED);
        let grasps: Vec<Grasp> = (0..cfg.grasp_count)
            .map(|k| {
                if k == 0 {
                    return Grasp { x: [0.0; 3], r: UnitQuaternion::IDENTITY };
                }
                let pj = cfg.grasp_position_jitter;
                let x = std::array::from_fn(|_| if pj > 0.0 { rng.random_range(-pj..pj) } else { 0.0 });
                let rj = cfg.grasp_rotation_jitter;
                let t = std::array::from_fn(|_| if rj > 0.0 { rng.random_range(-rj..rj) } else { 0.0 });
                Grasp { x, r: quat_exp(Tangent3(t)) }
            })
            .collect();
        let mut world = World {
            cfg,
            object,
            geometry,
            grasps,
            nominal: Nominal { x: [0.0; 3], q: [0.0; N_DOF] },
            goals: octahedral_group(),
        };
        let n = world.grasps.len() as f64;
        let mut x0 = [0.0; 3];
        let mut q0 = [0.0; N_DOF];
        for g in &world.grasps {
            x0 = v3::add(x0, v3::scale(g.x, 1.0 / n));
            let q = world.grasp_joints(g.x, 1.0);
            for (acc, v) in q0.iter_mut().zip(q) {
                *acc += v / n;
            }
        }
        world.nominal = Nominal { x: x0, q: q0 };
        Ok(Arc::new(world))
    }

    /// Closing angle at which finger `i` touches the object.
    pub fn contact_angles(&self, x: Vec3, size_scale: f64) -> [f64; N_FINGERS] {
        let c = &self.cfg;
        std::array::from_fn(|i| {
            let d = self.geometry.contact[i];
            let push = x[0] * d[0] + x[1] * d[1] + c.x3_attenuation * x[2] * d[2];
            c.contact_angle - c.position_gain * push - c.size_gain * (size_scale - 1.0)
        })
    }

    /// Grasp command: closing joints pressed to zero, tangents centred.
    pub fn grasp_command(&self) -> [f64; N_DOF] {
        [0.0; N_DOF]
    }

    fn grasp_joints(&self, x: Vec3, size_scale: f64) -> [f64; N_DOF] {
        let theta = self.contact_angles(x, size_scale);
        let mut q = self.grasp_command();
        for i in 0..N_FINGERS {
            q[3 * i] = q[3 * i].min(theta[i]);
        }
        q
    }

    /// Frame `(q, e_q)` of a joint configuration without noise.
    pub fn clean_frame(q: &[f64; N_DOF], q_filt: &[f64; N_DOF]) -> [f64; FRAME_DIM] {
        let mut f = [0.0; FRAME_DIM];
        for j in 0..N_DOF {
            f[j] = q[j];
            f[N_DOF + j] = q[j] - q_filt[j];
        }
        f
    }

    /// Noise-free observation after the closing joints settle against an
    /// object at `x`; used for observability probes.
    pub fn settled_frame(&self, x: Vec3, size_scale: f64, q_filt: &[f64; N_DOF]) -> [f64; FRAME_DIM] {
        let theta = self.contact_angles(x, size_scale);
        let mut q = *q_filt;
        for i in 0..N_FINGERS {
            q[3 * i] = q[3 * i].min(theta[i]);
        }
        Self::clean_frame(&q, q_filt)
    }
}

/// Uniform over the goal set, never returning `current`.
pub fn sample_goal(rng: &mut impl Rng, n_goals: usize, current: Option<usize>) -> usize {
    match current {
        Some(c) if n_goals > 1 => {
            let k = rng.random_range(0..n_goals - 1);
            if k >= c {
                k + 1
            } else {
                k
            }
        }
        _ => rng.random_range(0..n_goals),
    }
}

/// Termination rules shared by training and evaluation.
pub fn check_termination(state: &SystemState, estimate: Option<&Estimate>, mode: Mode, cfg: &EnvConfig) -> TerminationFlags {
    let interval_end = state.t_in_goal >= cfg.goal_steps;
    let reached = geodesic_distance(state.r, state.goal) < cfg.success_threshold;
    TerminationFlags {
        dropped: v3::norm(state.x) > cfg.drop_radius,
        goal_success: interval_end && reached,
        goal_timeout: interval_end && !reached,
        episode_timeout: state.episode_t >= cfg.max_steps,
        estimator_divergence: mode == Mode::Train
            && estimate.is_some_and(|e| geodesic_distance(e.r, state.r) > cfg.divergence_threshold),
        fault: false,
    }
}

/// Result of one control step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub obs: Observation,
    pub reward: f64,
    pub flags: TerminationFlags,
    /// Number of engaged fingers at the last substep.
    pub engaged: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvSnapshot {
    pub dr: DomainRandomization,
    pub state: SystemState,
    pub tip_w: Vec3,
    pub rng: ChaCha8Rng,
}

/// One reorientation environment with its own randomization and RNG stream.
#[derive(Debug, Clone)]
pub struct TactilePivot {
    pub id: usize,
    world: Arc<World>,
    pub dr: DomainRandomization,
    state: SystemState,
    tip_w: Vec3,
    rng: ChaCha8Rng,
    pub mode: Mode,
}

impl TactilePivot {
    pub fn new(world: Arc<World>, id: usize, seed: u64, mode: Mode) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(id as u64);
        let dr = DomainRandomization::sample(&world.cfg.randomization, &mut rng);
        TactilePivot { id, world, dr, state: SystemState::default(), tip_w: [0.0; 3], rng, mode }
    }

    pub fn world(&self) -> &Arc<World> {
        &self.world
    }

    pub fn state(&self) -> &SystemState {
        &self.state
    }

    /// Draws a grasp and a goal; returns the initial observation.
    pub fn reset(&mut self) -> Observation {
        let goal = sample_goal(&mut self.rng, self.world.goals.len(), None);
        self.reset_with_goal(goal)
    }

    pub fn reset_with_goal(&mut self, goal_index: usize) -> Observation {
        let k = self.rng.random_range(0..self.world.grasps.len());
        let grasp = self.world.grasps[k];
        let q = self.world.grasp_joints(grasp.x, self.dr.size_scale);
        self.state = SystemState {
            x: grasp.x,
            r: grasp.r,
            v: [0.0; 3],
            w: [0.0; 3],
            q,
            q_filt: self.world.grasp_command(),
            goal: self.world.goals[goal_index],
            goal_index,
            t_in_goal: 0,
            episode_t: 0,
        };
        self.tip_w = [0.0; 3];
        let frame = World::clean_frame(&self.state.q, &self.state.q_filt);
        let mut data = Vec::with_capacity(self.world.cfg.substeps * FRAME_DIM);
        for _ in 0..self.world.cfg.substeps {
            self.push_noisy(&frame, &mut data);
        }
        Observation { data }
    }

    /// Overrides the goal without touching the interval counters.
    pub fn set_goal(&mut self, goal_index: usize) {
        self.state.goal_index = goal_index;
        self.state.goal = self.world.goals[goal_index];
    }

    /// Switches to a new goal and restarts the goal interval.
    pub fn begin_interval(&mut self, goal_index: usize) {
        self.set_goal(goal_index);
        self.state.t_in_goal = 0;
    }

    fn push_noisy(&mut self, frame: &[f64; FRAME_DIM], out: &mut Vec<f64>) {
        let sigma = self.dr.obs_noise;
        for (j, v) in frame.iter().enumerate() {
            let n = if sigma > 0.0 { sigma * self.rng.sample::<f64, _>(StandardNormal) } else { 0.0 };
            out.push(v + n + self.dr.obs_bias[j]);
        }
    }

    /// Advances one control period with joint targets `action`.
    pub fn step(&mut self, action: &[f64]) -> Result<StepOutcome> {
        if action.len() != N_DOF {
            return Err(Error::Dimension { what: "action", expected: N_DOF, got: action.len() });
        }
        if action.iter().any(|a| !a.is_finite()) {
            return Err(Error::Simulation { env_id: self.id, detail: "non-finite action".into() });
        }
        let world = Arc::clone(&self.world);
        let cfg = &world.cfg;
        let lim = cfg.joint_limit;
        let q_d: [f64; N_DOF] = std::array::from_fn(|j| action[j].clamp(-lim, lim));
        let prev = self.state.clone();
        let dt = cfg.substep_dt();
        let alpha = (cfg.lowpass_alpha * self.dr.control_gain).min(1.0);
        let tip_sigma = cfg.tip_noise * world.object.tipping_susceptibility * self.dr.tip_scale;
        let decay = (-dt / cfg.tip_time_constant).exp();
        let diffusion = tip_sigma * (1.0 - decay * decay).sqrt();
        let mut kick = [0.0; 3];
        let wrench = &cfg.randomization.wrench;
        if wrench.enabled && self.rng.random::<f64>() < wrench.probability {
            let dir = v3::normalize(std::array::from_fn(|_| self.rng.sample::<f64, _>(StandardNormal)));
            kick = v3::scale(dir, self.rng.random_range(0.0..=wrench.max_speed));
        }

        let mut data = Vec::with_capacity(cfg.substeps * FRAME_DIM);
        let mut engaged = 0;
        for sub in 0..cfg.substeps {
            let s = &mut self.state;
            for j in 0..N_DOF {
                s.q_filt[j] += alpha * (q_d[j] - s.q_filt[j]);
            }
            let theta = world.contact_angles(s.x, self.dr.size_scale);
            let mut dq = [0.0; N_DOF];
            for j in 0..N_DOF {
                let step = (s.q_filt[j] - s.q[j]).clamp(-cfg.rate_limit, cfg.rate_limit);
                let mut next = (s.q[j] + step).clamp(-lim, lim);
                if j % 3 == 0 {
                    next = next.min(theta[j / 3]);
                }
                dq[j] = next - s.q[j];
                s.q[j] = next;
            }
            let mut g_sum = 0.0;
            let mut drive = [0.0; 3];
            engaged = 0;
            for i in 0..N_FINGERS {
                let g = logistic((s.q_filt[3 * i] - theta[i]) / cfg.engage_width);
                if g > 0.5 {
                    engaged += 1;
                }
                let [ta, tb] = world.geometry.tangent[i];
                let u = v3::add(v3::scale(ta, dq[3 * i + 1]), v3::scale(tb, dq[3 * i + 2]));
                drive = v3::add(drive, v3::scale(v3::cross(world.geometry.contact[i], u), g));
                g_sum += g;
            }
            let mut w = v3::scale(drive, cfg.rotation_gain / (self.dr.size_scale * dt * g_sum.max(1.0)));
            if engaged < 3 {
                let n: Vec3 = std::array::from_fn(|_| self.rng.sample::<f64, _>(StandardNormal));
                self.tip_w = v3::add(v3::scale(self.tip_w, decay), v3::scale(n, diffusion));
            } else {
                self.tip_w = [0.0; 3];
            }
            w = v3::add(w, self.tip_w);
            if sub == 0 {
                w = v3::add(w, kick);
            }
            s.v = if engaged < 2 { [0.0, 0.0, -cfg.drop_speed] } else { [0.0; 3] };
            let drift = cfg.x3_drift * world.object.drift_susceptibility * v3::norm(w) * dt;
            if drift > 0.0 {
                s.x[2] += drift * self.rng.sample::<f64, _>(StandardNormal);
            }
            s.w = w;
            s.r = quat_compose(quat_exp(Tangent3(v3::scale(w, dt))), s.r);
            s.x = v3::add(s.x, v3::scale(s.v, dt));
            let frame = World::clean_frame(&s.q, &s.q_filt);
            self.push_noisy(&frame, &mut data);
        }

        self.state.episode_t += 1;
        self.state.t_in_goal += 1;
        if !self.state.is_finite() {
            return Err(Error::Simulation { env_id: self.id, detail: format!("non-finite state {:?}", self.state) });
        }
        let r = reward(&prev, &self.state, self.state.goal, &world.nominal, &cfg.reward);
        let flags = check_termination(&self.state, None, self.mode, cfg);
        if flags.goal_success {
            let next = sample_goal(&mut self.rng, world.goals.len(), Some(self.state.goal_index));
            self.set_goal(next);
            self.state.t_in_goal = 0;
        }
        Ok(StepOutcome { obs: Observation { data }, reward: r, flags, engaged })
    }

    /// Everything that evolves after construction, for exact resumption.
    pub fn snapshot(&self) -> EnvSnapshot {
        EnvSnapshot { dr: self.dr.clone(), state: self.state.clone(), tip_w: self.tip_w, rng: self.rng.clone() }
    }

    pub fn restore(&mut self, snap: EnvSnapshot) {
        self.dr = snap.dr;
        self.state = snap.state;
        self.tip_w = snap.tip_w;
        self.rng = snap.rng;
    }

    /// Replaces the state; intended for probes and tests.
    pub fn set_state(&mut self, state: SystemState) {
        self.state = state;
        self.tip_w = [0.0; 3];
    }

    pub fn rng_mut(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}
