use serde::{Deserialize, Serialize};

use crate::manifold::{UnitQuaternion, Vec3};

pub const N_FINGERS: usize = 4;
pub const N_DOF: usize = 12;
/// `q` and `e_q` per frame.
pub const FRAME_DIM: usize = 2 * N_DOF;

/// Ground-truth hand-object state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemState {
    pub x: Vec3,
    pub r: UnitQuaternion,
    pub v: Vec3,
    pub w: Vec3,
    /// Joint angles, finger-major: `[close, tangent_a, tangent_b]` per finger.
    pub q: [f64; N_DOF],
    pub q_filt: [f64; N_DOF],
    pub goal: UnitQuaternion,
    pub goal_index: usize,
    pub t_in_goal: u32,
    pub episode_t: u32,
}

impl Default for SystemState {
    fn default() -> Self {
        SystemState {
            x: [0.0; 3],
            r: UnitQuaternion::IDENTITY,
            v: [0.0; 3],
            w: [0.0; 3],
            q: [0.0; N_DOF],
            q_filt: [0.0; N_DOF],
            goal: UnitQuaternion::IDENTITY,
            goal_index: 0,
            t_in_goal: 0,
            episode_t: 0,
        }
    }
}

impl SystemState {
    pub fn object(&self) -> ObjectState {
        ObjectState { x: self.x, r: self.r, v: self.v, w: self.w }
    }

    pub fn is_finite(&self) -> bool {
        self.x.iter().chain(&self.v).chain(&self.w).chain(&self.q).chain(&self.q_filt).all(|v| v.is_finite())
            && self.r.to_array().iter().all(|v| v.is_finite())
    }
}

/// The object part of the state, the quantity the estimator tracks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectState {
    pub x: Vec3,
    pub r: UnitQuaternion,
    pub v: Vec3,
    pub w: Vec3,
}

/// Stacked tactile proxy: `substeps` frames of `(q, e_q)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub data: Vec<f64>,
}

impl Observation {
    pub fn frames(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(FRAME_DIM)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TerminationFlags {
    pub dropped: bool,
    /// The goal interval ended with the object inside the success threshold.
    pub goal_success: bool,
    pub goal_timeout: bool,
    pub episode_timeout: bool,
    pub estimator_divergence: bool,
    pub fault: bool,
}

impl TerminationFlags {
    pub fn done(&self) -> bool {
        self.dropped || self.goal_timeout || self.episode_timeout || self.estimator_divergence || self.fault
    }

    /// Compact bit encoding used in trajectory dumps.
    pub fn bits(&self) -> u8 {
        [self.dropped, self.goal_success, self.goal_timeout, self.episode_timeout, self.estimator_divergence, self.fault]
            .iter()
            .enumerate()
            .map(|(i, b)| (*b as u8) << i)
            .sum()
    }
}
