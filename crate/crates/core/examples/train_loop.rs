//! Trains one mode for a handful of iterations and prints the metrics.
//!
//! cargo run --release --example train_loop -- oracle 20 [config.toml]

use std::time::Instant;

use ecrl::trainer::{TrainConfig, TrainMode, TrainState};

fn main() -> ecrl::Result<()> {
    let mut args = std::env::args().skip(1);
    let mode: TrainMode = args.next().unwrap_or_else(|| "ecrl".into()).parse()?;
    let iterations: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(10);
    let mut cfg = match args.next() {
        Some(path) => toml::from_str(&std::fs::read_to_string(path)?).map_err(|e| ecrl::Error::config("file", e.to_string()))?,
        None => TrainConfig::default(),
    };
    cfg.mode = mode;
    cfg.iterations = iterations;
    let mut state = TrainState::new(cfg)?;
    for _ in 0..iterations {
        let t = Instant::now();
        let m = state.train_iteration()?;
        println!(
            "it {:4} rho {:.3} reward {:8.3} eplen {:6.1} succ {:.2} drops {:3} est_err {:.3} est_loss {:.4} kl {:.4} lr {:.1e} [{:.2}s]",
            m.iteration,
            m.rho,
            m.reward_mean,
            m.episode_length,
            m.success_rate,
            m.drops,
            m.est_rot_err,
            m.est_loss,
            m.approx_kl,
            m.lr,
            t.elapsed().as_secs_f64()
        );
    }
    Ok(())
}
