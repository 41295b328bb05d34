use super::config::RewardConfig;
use super::state::SystemState;
use crate::manifold::{geodesic_distance, v3, UnitQuaternion};

/// Reference pose the position and joint penalties are measured from.
#[derive(Debug, Clone, PartialEq)]
pub struct Nominal {
    pub x: [f64; 3],
    pub q: [f64; 12],
}

/// Clipped progress toward the goal minus quartic position and joint
/// penalties.
pub fn reward(prev: &SystemState, state: &SystemState, goal: UnitQuaternion, nominal: &Nominal, cfg: &RewardConfig) -> f64 {
    let theta_prev = geodesic_distance(prev.r, goal);
    let theta = geodesic_distance(state.r, goal);
    let rotation = cfg.lambda_theta * (theta_prev - theta).min(cfg.theta_clip);
    let dx = v3::norm(v3::sub(state.x, nominal.x)).min(cfg.x_clip);
    let position = cfg.lambda_x_outer * (cfg.lambda_x * dx).powi(4);
    let joints: f64 = state.q.iter().zip(&nominal.q).map(|(q, q0)| (q - q0).powi(4)).sum();
    rotation - position - cfg.lambda_q * joints / state.q.len() as f64
}
