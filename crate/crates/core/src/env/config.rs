use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Simulator constants. Every field can be overridden from a config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    /// Control period, s.
    pub control_dt: f64,
    /// Simulation substeps per control step; one observation frame each.
    pub substeps: usize,
    pub joint_limit: f64,
    /// First-order low-pass coefficient applied to the joint targets.
    pub lowpass_alpha: f64,
    /// Maximum joint motion per substep, rad.
    pub rate_limit: f64,
    /// Width of the logistic engagement gate, rad.
    pub engage_width: f64,
    /// Closing-joint angle at which a finger touches the centred object.
    pub contact_angle: f64,
    /// Downward tilt of the contact directions, degrees.
    pub contact_tilt_deg: f64,
    /// Contact-angle sensitivity to object displacement, rad/m.
    pub position_gain: f64,
    /// Attenuation of the vertical displacement in the contact geometry.
    pub x3_attenuation: f64,
    /// Contact-angle shift per unit of object size scale, rad.
    pub size_gain: f64,
    /// Object rotation per unit of averaged contact motion.
    pub rotation_gain: f64,
    /// Stationary std of the tipping angular velocity, rad/s.
    pub tip_noise: f64,
    /// Correlation time of the tipping process, s.
    pub tip_time_constant: f64,
    pub drop_speed: f64,
    /// Vertical random-walk scale per radian of rotation, m.
    pub x3_drift: f64,
    pub goal_steps: u32,
    pub max_steps: u32,
    pub drop_radius: f64,
    pub success_threshold: f64,
    pub divergence_threshold: f64,
    pub grasp_count: usize,
    pub grasp_position_jitter: f64,
    pub grasp_rotation_jitter: f64,
    pub randomization: RandomizationConfig,
    pub reward: RewardConfig,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            control_dt: 0.1,
            substeps: 6,
            joint_limit: 1.2,
            lowpass_alpha: 0.3,
            rate_limit: 0.05,
            engage_width: 0.05,
            contact_angle: -0.6,
            contact_tilt_deg: 30.0,
            position_gain: 5.0,
            x3_attenuation: 0.1,
            size_gain: 0.5,
            rotation_gain: 8.0,
            tip_noise: 0.5,
            tip_time_constant: 0.5,
            drop_speed: 0.5,
            x3_drift: 0.005,
            goal_steps: 50,
            max_steps: 200,
            drop_radius: 0.1,
            success_threshold: 0.4,
            divergence_threshold: std::f64::consts::FRAC_PI_4,
            grasp_count: 16,
            grasp_position_jitter: 0.003,
            grasp_rotation_jitter: 0.02,
            randomization: RandomizationConfig::default(),
            reward: RewardConfig::default(),
        }
    }
}

impl EnvConfig {
    pub fn substep_dt(&self) -> f64 {
        self.control_dt / self.substeps as f64
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("env.control_dt", self.control_dt),
            ("env.joint_limit", self.joint_limit),
            ("env.rate_limit", self.rate_limit),
            ("env.engage_width", self.engage_width),
            ("env.tip_time_constant", self.tip_time_constant),
            ("env.drop_radius", self.drop_radius),
            ("env.success_threshold", self.success_threshold),
        ];
        for (path, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::config(path, format!("must be positive, got {v}")));
            }
        }
        if !(0.0..=1.0).contains(&self.lowpass_alpha) || self.lowpass_alpha == 0.0 {
            return Err(Error::config("env.lowpass_alpha", "must lie in (0, 1]"));
        }
        if self.substeps == 0 {
            return Err(Error::config("env.substeps", "must be at least 1"));
        }
        if self.grasp_count == 0 {
            return Err(Error::config("env.grasp_count", "must be at least 1"));
        }
        if self.goal_steps == 0 || self.max_steps == 0 {
            return Err(Error::config("env.goal_steps", "goal and episode lengths must be positive"));
        }
        self.randomization.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RandomizationConfig {
    pub tip_scale: [f64; 2],
    pub obs_noise: [f64; 2],
    pub obs_bias: f64,
    pub size_scale: [f64; 2],
    pub control_jitter: f64,
    pub wrench: WrenchConfig,
}

impl Default for RandomizationConfig {
    fn default() -> Self {
        RandomizationConfig {
            tip_scale: [0.5, 1.5],
            obs_noise: [0.0, 0.01],
            obs_bias: 0.01,
            size_scale: [0.9, 1.1],
            control_jitter: 0.1,
            wrench: WrenchConfig::default(),
        }
    }
}

impl RandomizationConfig {
    /// Every range collapsed to its nominal value.
    pub fn disabled() -> Self {
        RandomizationConfig {
            tip_scale: [1.0, 1.0],
            obs_noise: [0.0, 0.0],
            obs_bias: 0.0,
            size_scale: [1.0, 1.0],
            control_jitter: 0.0,
            wrench: WrenchConfig::default(),
        }
    }

    fn validate(&self) -> Result<()> {
        for (path, r) in [
            ("env.randomization.tip_scale", self.tip_scale),
            ("env.randomization.obs_noise", self.obs_noise),
            ("env.randomization.size_scale", self.size_scale),
        ] {
            if !(r[0] <= r[1] && r[0] >= 0.0 && r[1].is_finite()) {
                return Err(Error::config(path, format!("expected 0 <= lo <= hi, got {r:?}")));
            }
        }
        if self.size_scale[0] <= 0.0 {
            return Err(Error::config("env.randomization.size_scale", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.control_jitter) {
            return Err(Error::config("env.randomization.control_jitter", "must lie in [0, 1)"));
        }
        if !(0.0..=1.0).contains(&self.wrench.probability) {
            return Err(Error::config("env.randomization.wrench.probability", "must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// Random angular-velocity kicks applied to the object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WrenchConfig {
    pub enabled: bool,
    /// Probability per control step.
    pub probability: f64,
    /// Maximum kick magnitude, rad/s.
    pub max_speed: f64,
}

impl Default for WrenchConfig {
    fn default() -> Self {
        WrenchConfig { enabled: false, probability: 0.01, max_speed: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardConfig {
    pub lambda_theta: f64,
    pub lambda_x_outer: f64,
    pub lambda_x: f64,
    pub lambda_q: f64,
    pub theta_clip: f64,
    pub x_clip: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig { lambda_theta: 1000.0, lambda_x_outer: 0.1, lambda_x: 50.0, lambda_q: 2000.0, theta_clip: 0.1, x_clip: 0.3 }
    }
}
