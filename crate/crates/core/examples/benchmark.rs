//! Benchmarks a checkpoint on all 24 goals, runs the consecutive-goal test
//! and summarizes the final-angle distribution.
//!
//! cargo run --release --example benchmark -- <checkpoint.json> [trials] [oracle|naive|estimada|ecrl]

use ecrl::bench::{final_angle_distribution, run_benchmark, run_consecutive, BenchConfig};
use ecrl::trainer::{Agent, TrainMode};

fn main() -> ecrl::Result<()> {
    let mut args = std::env::args().skip(1);
    let path = args.next().ok_or_else(|| ecrl::Error::Invalid("usage: benchmark <checkpoint.json> [trials] [mode]".into()))?;
    let trials: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(10);
    let agent = Agent::load(path.as_ref())?;
    let mode: TrainMode = match args.next() {
        Some(m) => m.parse()?,
        None => agent.cfg.mode,
    };
    let cfg = BenchConfig { n_trials: trials, consecutive_trials: 10, ..BenchConfig::default() };
    let report = run_benchmark(&agent, mode, &cfg)?;
    println!("{mode}: B = {:.1}%, estimator error {:.3} rad", report.success_rate, report.est_error_mean);
    for g in &report.per_goal {
        println!("  goal {:2}: {:5.1}%", g.goal_index, g.success_rate);
    }
    let q = final_angle_distribution(&report.final_angles())?;
    println!("final angle quantiles: p5 {:.2} p25 {:.2} p50 {:.2} p75 {:.2} p95 {:.2}", q.p5, q.p25, q.p50, q.p75, q.p95);
    let c = run_consecutive(&agent, mode, &cfg)?;
    println!("consecutive successes: median {} {}", c.median, c.counts_list());
    Ok(())
}
