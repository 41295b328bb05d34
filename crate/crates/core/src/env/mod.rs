//! TactilePivot: a vectorized, partially observable in-hand reorientation
//! simulator.
//!
//! Four fingers with three joints each (one closing, two tangential) hold
//! the object. A finger is engaged when its filtered closing target lies
//! beyond the contact angle; engaged fingers drag the object with their
//! tangential motion. Fewer than three engaged fingers lets the object tip
//! randomly, fewer than two drops it. The only exteroceptive signal is the
//! joint position error of the closing joints, which encodes the horizontal
//! object position strongly and its height only weakly.

pub mod config;
pub mod object;
pub mod reward;
pub mod sim;
pub mod state;
pub mod trajectory;
pub mod vec_env;

pub use config::{EnvConfig, RandomizationConfig, RewardConfig, WrenchConfig};
pub use object::ObjectSpec;
pub use reward::{reward, Nominal};
pub use sim::{check_termination, sample_goal, DomainRandomization, EnvSnapshot, Geometry, Grasp, StepOutcome, TactilePivot, World};
pub use state::{Mode, ObjectState, Observation, SystemState, TerminationFlags, FRAME_DIM, N_DOF, N_FINGERS};
pub use trajectory::{write_csv, TrajectoryRow};
pub use vec_env::VecEnv;

#[cfg(test)]
mod tests;
