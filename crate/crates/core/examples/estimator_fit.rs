//! Fits the recursive estimator to rollouts of a random finger-sweeping
//! policy and reports held-out errors before and after.
//!
//! cargo run --release --example estimator_fit -- [epochs]

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ecrl::env::{EnvConfig, Mode, ObjectSpec, ObjectState, TactilePivot, World, N_DOF};
use ecrl::estimator::{init_estimate, Estimator, EstimatorConfig, LossWeights, SequenceData, SequenceStart, SequenceStep};
use ecrl::nn::Matrix;

fn rollouts(world: &Arc<World>, n: usize, len: usize, seed: u64, latent: usize) -> SequenceData {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut envs: Vec<TactilePivot> = (0..n).map(|i| TactilePivot::new(Arc::clone(world), i, seed, Mode::Eval)).collect();
    let mut obs: Vec<Vec<f64>> = envs.iter_mut().map(|e| e.reset().data).collect();
    let start_truth: Vec<ObjectState> = envs.iter().map(|e| e.state().object()).collect();
    let start = start_truth.iter().map(|t| init_estimate(t, latent)).collect();
    let mut u_prev = vec![vec![0.0; N_DOF]; n];
    let mut reset = vec![true; n];
    let mut steps = Vec::new();
    for _ in 0..len {
        let truth = envs.iter().map(|e| e.state().object()).collect();
        steps.push(SequenceStep {
            z: Matrix::from_rows(&obs),
            u_prev: Matrix::from_rows(&u_prev),
            truth,
            reset: reset.clone(),
            valid: vec![true; n],
        });
        for (i, env) in envs.iter_mut().enumerate() {
            let mut a = world.grasp_command();
            for j in (0..N_DOF).filter(|j| j % 3 != 0) {
                a[j] = env.state().q[j] + rng.random_range(-0.02..0.02);
            }
            let o = env.step(&a).expect("finite action");
            reset[i] = o.flags.done();
            obs[i] = if reset[i] { env.reset().data } else { o.obs.data };
            u_prev[i] = if reset[i] { vec![0.0; N_DOF] } else { a.to_vec() };
        }
    }
    SequenceData { start, start_truth, steps }
}

fn main() -> ecrl::Result<()> {
    let epochs: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(30);
    let world = World::new(EnvConfig::default(), ObjectSpec::preset("cube")?)?;
    let cfg = EstimatorConfig { hidden: vec![64; 4], minibatch_size: 64, ..EstimatorConfig::default() };
    let latent = cfg.latent_dim;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut est = Estimator::new(world.cfg.substeps * ecrl::env::FRAME_DIM, cfg, &mut rng)?;
    let held_out = rollouts(&world, 32, 32, 999, latent);
    let w = LossWeights::default();
    let before = est.f.evaluate(&held_out, SequenceStart::Stored, &w)?;
    for e in 0..epochs {
        let data = rollouts(&world, 64, 32, e as u64, latent);
        let m = est.train_epoch(&data, &mut rng)?;
        if e % 10 == 0 {
            println!("epoch {e:3}: loss {:.4} ({} steps)", m.mean_loss, m.steps);
        }
    }
    let after = est.f.evaluate(&held_out, SequenceStart::Stored, &w)?;
    for (name, b) in [("before", before), ("after", after)] {
        println!(
            "{name:6}: rmse position {:.4} m, rotation {:.4} rad, velocity {:.4}, angular {:.4}",
            b.rmse_pos, b.rmse_rot, b.rmse_vel, b.rmse_ang
        );
    }
    Ok(())
}
