use std::path::Path;

use serde::Serialize;

use super::state::{SystemState, TerminationFlags};
use crate::error::{Error, Result};

/// One control step of a recorded rollout.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrajectoryRow {
    pub t: f64,
    pub x1: f64,
    pub x2: f64,
    pub x3: f64,
    pub qw: f64,
    pub qx: f64,
    pub qy: f64,
    pub qz: f64,
    pub goal_index: usize,
    pub reward: f64,
    pub flags: u8,
}

impl TrajectoryRow {
    pub fn new(t: f64, state: &SystemState, reward: f64, flags: &TerminationFlags) -> Self {
        TrajectoryRow {
            t,
            x1: state.x[0],
            x2: state.x[1],
            x3: state.x[2],
            qw: state.r.w,
            qx: state.r.x,
            qy: state.r.y,
            qz: state.r.z,
            goal_index: state.goal_index,
            reward,
            flags: flags.bits(),
        }
    }
}

/// Writes serializable rows as CSV with a header line.
pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    Error::Invalid(format!("csv: {e}"))
}
