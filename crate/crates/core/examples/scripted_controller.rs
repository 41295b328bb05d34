//! A hand-written controller with access to the true object state, used to
//! check how reachable the goal set is under a given simulator config.
//!
//! cargo run --release --example scripted_controller -- [rotation_gain] [trials]

use std::sync::Arc;

use ecrl::env::{EnvConfig, Mode, ObjectSpec, TactilePivot, World, N_DOF, N_FINGERS};
use ecrl::manifold::{geodesic_distance, quat_compose, quat_log, v3};

/// Joint targets that rotate the object by at most `max_step` rad toward
/// its goal, keeping every finger closed.
fn control(world: &World, env: &TactilePivot, max_step: f64) -> [f64; N_DOF] {
    let s = env.state();
    let e = quat_log(quat_compose(s.goal, s.r.inverse())).0;
    let n = v3::norm(e);
    let phi = if n > max_step { v3::scale(e, max_step / n) } else { e };
    // mean of (I - c cᵀ) over the contacts is diagonal for the symmetric hand
    let tilt = world.cfg.contact_tilt_deg.to_radians();
    let inv = [1.0 / (1.0 - tilt.cos().powi(2) / 2.0), 1.0 / (1.0 - tilt.cos().powi(2) / 2.0), 1.0 / (1.0 - tilt.sin().powi(2))];
    let phi = [phi[0] * inv[0], phi[1] * inv[1], phi[2] * inv[2]];
    let mut q_d = world.grasp_command();
    for i in 0..N_FINGERS {
        let c = world.geometry.contact[i];
        let u = v3::scale(v3::cross(phi, c), 1.0 / world.cfg.rotation_gain);
        let [ta, tb] = world.geometry.tangent[i];
        q_d[3 * i + 1] = s.q[3 * i + 1] + v3::dot(ta, u);
        q_d[3 * i + 2] = s.q[3 * i + 2] + v3::dot(tb, u);
    }
    q_d
}

fn main() -> ecrl::Result<()> {
    let mut args = std::env::args().skip(1);
    let mut cfg = EnvConfig::default();
    if let Some(g) = args.next() {
        cfg.rotation_gain = g.parse().map_err(|_| ecrl::Error::config("rotation_gain", "not a number"))?;
    }
    let trials: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(10);
    let world = World::new(cfg, ObjectSpec::preset("cube")?)?;
    let (mut successes, mut total, mut reward) = (0, 0, 0.0);
    for goal in 0..world.goals.len() {
        let mut hits = 0;
        for k in 0..trials {
            let mut env = TactilePivot::new(Arc::clone(&world), goal * trials + k, 7, Mode::Eval);
            env.reset_with_goal(goal);
            for _ in 0..world.cfg.goal_steps {
                let goal_before = env.state().goal;
                let o = env.step(&control(&world, &env, 0.1))?;
                reward += o.reward;
                if o.flags.goal_success || o.flags.done() {
                    hits += o.flags.goal_success as usize;
                    if !o.flags.goal_success {
                        println!("goal {goal:2} trial {k}: ended {:.2} rad short", geodesic_distance(env.state().r, goal_before));
                    }
                    break;
                }
            }
            total += 1;
        }
        successes += hits;
        println!("goal {goal:2}: {hits}/{trials}");
    }
    println!(
        "success {:.1}% over {total} intervals, mean reward {:.1} per interval",
        100.0 * successes as f64 / total as f64,
        reward / total as f64
    );
    Ok(())
}
