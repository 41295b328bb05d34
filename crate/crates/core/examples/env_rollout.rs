//! Rolls out the simulator under a slow sinusoidal sweep of the tangential
//! joints and writes the trajectory as CSV.
//!
//! cargo run --example env_rollout -- [out.csv] [--two-fingers]

use std::sync::Arc;

use ecrl::env::{write_csv, EnvConfig, Mode, ObjectSpec, TactilePivot, TrajectoryRow, World, N_DOF};

fn main() -> ecrl::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let out = args.iter().find(|a| !a.starts_with("--")).cloned().unwrap_or_else(|| "trajectory.csv".into());
    let two_fingers = args.iter().any(|a| a == "--two-fingers");
    let world = World::new(EnvConfig::default(), ObjectSpec::preset("cube")?)?;
    let mut env = TactilePivot::new(Arc::clone(&world), 0, 1, Mode::Eval);
    env.reset();
    let dt = world.cfg.control_dt;
    let mut rows = Vec::new();
    for step in 0..world.cfg.goal_steps {
        let t = step as f64 * dt;
        let mut a = world.grasp_command();
        for (i, finger) in a.chunks_mut(3).enumerate() {
            finger[1] = 0.08 * (0.8 * t).sin();
            if two_fingers && i % 2 == 1 {
                finger[0] = -1.2;
            }
        }
        debug_assert_eq!(a.len(), N_DOF);
        let o = env.step(&a)?;
        rows.push(TrajectoryRow::new(t + dt, env.state(), o.reward, &o.flags));
        if o.flags.dropped {
            break;
        }
    }
    write_csv(out.as_ref(), &rows)?;
    let s = env.state();
    println!("{} steps written to {out}; final x = {:.4?}, engaged fingers {}", rows.len(), s.x, if two_fingers { 2 } else { 4 });
    Ok(())
}
