//! Briefly trains a naive policy, then reproduces the tipping fan-out and
//! the height drift as CSV files.
//!
//! cargo run --release --example failure_modes -- [iterations] [out_dir]

use std::path::PathBuf;

use ecrl::bench::failure::{drift_demo, drift_error_curve, final_angles, tipping_demo, trend_slope, write_drift, write_tipping};
use ecrl::trainer::{TrainConfig, TrainMode, TrainState};

fn main() -> ecrl::Result<()> {
    let mut args = std::env::args().skip(1);
    let iterations: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(20);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "failure_demo".into()));
    let cfg = TrainConfig { mode: TrainMode::Naive, n_envs: 64, iterations, ppo: ecrl::policy::PpoConfig { minibatch_size: 1024, ..Default::default() }, ..TrainConfig::default() };
    let mut state = TrainState::new(cfg)?;
    for _ in 0..iterations {
        state.train_iteration()?;
    }
    let agent = state.agent();

    let tipping = tipping_demo(&agent, 1, 20)?;
    write_tipping(&out.join("tipping.csv"), &tipping)?;
    let finals = final_angles(&tipping);
    let spread = finals.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - finals.iter().cloned().fold(f64::INFINITY, f64::min);
    println!("tipping: final d(R, R_g) spread over {} repeats = {spread:.3} rad", finals.len());

    let drift = drift_demo(&agent, 1, 20, 20.0)?;
    write_drift(&out.join("drift.csv"), &drift)?;
    let curve = drift_error_curve(&drift);
    println!("drift: mean |x3_est - x3| trend {:.2e} m/s; first {:.4} m, last {:.4} m", trend_slope(&curve), curve[0].1, curve.last().unwrap().1);
    Ok(())
}
