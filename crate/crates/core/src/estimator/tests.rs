use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::env::{EnvConfig, Mode, ObjectSpec, TactilePivot, World, FRAME_DIM};
use crate::manifold::{geodesic_distance, quat_exp, quat_log, v3, Tangent3};

const OBS: usize = 6 * FRAME_DIM;

fn small_cfg(width: usize, latent: usize) -> EstimatorConfig {
    EstimatorConfig { hidden: vec![width, width], latent_dim: latent, minibatch_size: 64, ..EstimatorConfig::default() }
}

fn perturbed(f: &mut EstimatorNet, scale: f64, rng: &mut impl Rng) {
    for p in f.net.params_mut() {
        for v in &mut p.data {
            *v += rng.random_range(-scale..scale);
        }
    }
}

fn random_estimate(rng: &mut impl Rng, latent: usize) -> Estimate {
    let t: [f64; 3] = std::array::from_fn(|_| rng.random_range(-2.0..2.0));
    Estimate {
        x: std::array::from_fn(|_| rng.random_range(-0.01..0.01)),
        r: quat_exp(Tangent3(t)),
        v: std::array::from_fn(|_| rng.random_range(-0.1..0.1)),
        w: std::array::from_fn(|_| rng.random_range(-1.0..1.0)),
        latent: (0..latent).map(|_| rng.random_range(-0.5..0.5)).collect(),
    }
}

/// Rollout segments of scripted random tangential motion.
pub(crate) fn env_sequences(n: usize, len: usize, seed: u64, latent: usize) -> SequenceData {
    let world = World::new(EnvConfig::default(), ObjectSpec::preset("cube").unwrap()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut envs: Vec<TactilePivot> = (0..n).map(|i| TactilePivot::new(Arc::clone(&world), i, seed, Mode::Eval)).collect();
    let mut obs: Vec<Vec<f64>> = envs.iter_mut().map(|e| e.reset().data).collect();
    let mut u_prev = vec![[0.0; N_DOF]; n];
    let start_truth: Vec<ObjectState> = envs.iter().map(|e| e.state().object()).collect();
    let start = start_truth.iter().map(|t| init_estimate(t, latent)).collect();
    let mut steps = Vec::new();
    let mut first = vec![true; n];
    for _ in 0..len {
        let z = Matrix::from_rows(&obs);
        let u = Matrix::from_rows(&u_prev.iter().map(|u| u.to_vec()).collect::<Vec<_>>());
        let truth: Vec<ObjectState> = envs.iter().map(|e| e.state().object()).collect();
        steps.push(SequenceStep { z, u_prev: u, truth, reset: first.clone(), valid: vec![true; n] });
        for (i, env) in envs.iter_mut().enumerate() {
            let mut a = [0.0; N_DOF];
            for j in 0..N_DOF {
                if j % 3 != 0 {
                    a[j] = rng.random_range(-0.3..0.3);
                }
            }
            let out = env.step(&a).unwrap();
            first[i] = out.flags.done();
            obs[i] = if first[i] { env.reset().data } else { out.obs.data };
            u_prev[i] = if first[i] { [0.0; N_DOF] } else { a };
        }
    }
    SequenceData { start, start_truth, steps }
}

#[test]
fn zero_network_is_the_identity_update() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut f = EstimatorNet::new(FRAME_DIM, &small_cfg(8, 4), &mut rng);
    f.net.params_mut().iter_mut().for_each(|p| p.data.iter_mut().for_each(|v| *v = 0.0));
    let mut prev = random_estimate(&mut rng, 4);
    prev.latent = vec![0.0; 4];
    prev.r = prev.r.canonical();
    let next = f.predict(&[0.3; FRAME_DIM], &[0.1; N_DOF], &prev).unwrap();
    assert_eq!(next.x, prev.x);
    assert_eq!(next.v, prev.v);
    assert_eq!(next.w, prev.w);
    assert_eq!(next.latent, prev.latent);
    assert!(geodesic_distance(next.r, prev.r) < 1e-12);
}

#[test]
fn predictions_stay_unit_norm_and_latent_bounded() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut f = EstimatorNet::new(FRAME_DIM, &small_cfg(8, 4), &mut rng);
    perturbed(&mut f, 0.5, &mut rng);
    let n = 10_000;
    let prev: Vec<Estimate> = (0..n).map(|_| random_estimate(&mut rng, 4)).collect();
    let z = Matrix::from_vec(n, FRAME_DIM, (0..n * FRAME_DIM).map(|_| rng.random_range(-1.0..1.0)).collect());
    let u = Matrix::from_vec(n, N_DOF, (0..n * N_DOF).map(|_| rng.random_range(-1.2..1.2)).collect());
    for e in f.predict_batch(&z, &u, &prev).unwrap() {
        assert!((e.r.norm() - 1.0).abs() < 1e-9);
        assert!(e.r.w >= 0.0);
        assert!(e.latent.iter().all(|l| l.abs() < 1.0));
    }
}

#[test]
fn init_estimate_copies_pose_and_zeroes_velocities() {
    let s = ObjectState {
        x: [0.01, 0.0, -0.002],
        r: quat_exp(Tangent3([0.1, 0.2, 0.3])),
        v: [1.0, 2.0, 3.0],
        w: [4.0, 5.0, 6.0],
    };
    let e = init_estimate(&s, 32);
    assert_eq!((e.x, e.r), (s.x, s.r));
    assert_eq!((e.v, e.w), ([0.0; 3], [0.0; 3]));
    assert_eq!(e.latent, vec![0.0; 32]);
    assert!(geodesic_distance(e.r, s.r) < 1e-12);
}

#[test]
fn loss_closed_forms_and_small_angle_oracle() {
    let w = LossWeights::default();
    let truth = ObjectState { x: [0.0; 3], r: UnitQuaternion::IDENTITY, v: [0.0; 3], w: [0.0; 3] };
    let exact = init_estimate(&truth, 2);
    assert_eq!(loss(&exact, &truth, &w), 0.0);
    let turned = Estimate { r: UnitQuaternion::from_axis_angle([0.0, 1.0, 0.0], std::f64::consts::FRAC_PI_2), ..exact.clone() };
    assert!((loss(&turned, &truth, &w) - w.rotation * std::f64::consts::FRAC_PI_2).abs() < 1e-12);

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..100 {
        let truth = ObjectState {
            x: std::array::from_fn(|_| rng.random_range(-0.01..0.01)),
            r: quat_exp(Tangent3(std::array::from_fn(|_| rng.random_range(-2.0..2.0)))),
            v: std::array::from_fn(|_| rng.random_range(-0.5..0.5)),
            w: std::array::from_fn(|_| rng.random_range(-1.0..1.0)),
        };
        let dr: [f64; 3] = std::array::from_fn(|_| rng.random_range(-0.05..0.05));
        let pred = Estimate {
            x: v3::add(truth.x, std::array::from_fn(|_| rng.random_range(-0.05..0.05))),
            r: crate::manifold::quat_compose(quat_exp(Tangent3(dr)), truth.r),
            v: v3::add(truth.v, std::array::from_fn(|_| rng.random_range(-0.5..0.5))),
            w: v3::add(truth.w, std::array::from_fn(|_| rng.random_range(-0.5..0.5))),
            latent: vec![],
        };
        // flat vector of weighted residuals, rotation through the log map
        let rot = quat_log(crate::manifold::relative_rotation(truth.r, pred.r)).0;
        let mut flat = Vec::new();
        for k in 0..3 {
            flat.push(w.position * (pred.x[k] - truth.x[k]));
            flat.push(w.rotation * rot[k]);
            flat.push(w.velocity * (pred.v[k] - truth.v[k]));
            flat.push(w.angular_velocity * (pred.w[k] - truth.w[k]));
        }
        let oracle = flat.iter().map(|v| v * v).sum::<f64>().sqrt();
        let l = loss(&pred, &truth, &w);
        assert!((l - oracle).abs() <= 0.02 * oracle, "{l} vs {oracle}");
    }
}

#[test]
fn batched_loss_is_rmse_of_single_losses() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut f = EstimatorNet::new(OBS, &small_cfg(8, 3), &mut rng);
    perturbed(&mut f, 0.3, &mut rng);
    let data = env_sequences(5, 1, 4, 3);
    let mut data = data;
    data.steps[0].reset = vec![false; 5];
    let w = LossWeights::default();
    let stats = f.evaluate(&data, SequenceStart::Stored, &w).unwrap();
    let z = &data.steps[0].z;
    let preds = f.predict_batch(z, &data.steps[0].u_prev, &data.start).unwrap();
    let ms: f64 = preds.iter().zip(&data.steps[0].truth).map(|(p, t)| loss(p, t, &w).powi(2)).sum::<f64>() / 5.0;
    assert!((stats.loss - ms.sqrt()).abs() < 1e-12);
    assert_eq!(stats.samples, 5);
}

#[test]
fn bptt_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let latent = 3;
    let mut f = EstimatorNet::new(OBS, &small_cfg(8, latent), &mut rng);
    perturbed(&mut f, 0.2, &mut rng);
    let mut data = env_sequences(4, 3, 5, latent);
    data.start = (0..4).map(|_| random_estimate(&mut rng, latent)).collect();
    for s in &mut data.steps {
        s.reset = vec![false; 4];
    }
    // one sequence restarts mid-way, one row is excluded from the loss
    data.steps[1].reset[2] = true;
    data.steps[2].valid[0] = false;
    let w = LossWeights::default();
    let (_, grads) = f.loss_and_grad(&data, SequenceStart::Stored, &w).unwrap();
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for pi in 0..f.net.params().len() {
        for k in 0..f.net.params()[pi].len() {
            let mut plus = f.clone();
            plus.net.params_mut()[pi].data[k] += h;
            let mut minus = f.clone();
            minus.net.params_mut()[pi].data[k] -= h;
            let lp = plus.evaluate(&data, SequenceStart::Stored, &w).unwrap().loss;
            let lm = minus.evaluate(&data, SequenceStart::Stored, &w).unwrap().loss;
            let fd = (lp - lm) / (2.0 * h);
            let a = grads[pi].data[k];
            let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-4);
            worst = worst.max(rel);
        }
    }
    assert!(worst < 1e-3, "worst relative error {worst}");
}

#[test]
fn segment_gradient_ignores_how_the_start_was_produced() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let latent = 3;
    let mut f = EstimatorNet::new(OBS, &small_cfg(8, latent), &mut rng);
    perturbed(&mut f, 0.2, &mut rng);
    let data = env_sequences(3, 4, 6, latent);
    let w = LossWeights::default();
    // second half restarted from the estimate the first half produced
    let mut tape_start = data.start.clone();
    for s in &data.steps[..2] {
        let pred = f.predict_batch(&s.z, &s.u_prev, &tape_start).unwrap();
        tape_start = pred
            .into_iter()
            .zip(&s.truth)
            .zip(&s.reset)
            .map(|((p, t), r)| if *r { init_estimate(t, latent) } else { p })
            .collect();
    }
    let tail = SequenceData { start: tape_start.clone(), start_truth: data.steps[1].truth.clone(), steps: data.steps[2..].to_vec() };
    let (_, g1) = f.loss_and_grad(&tail, SequenceStart::Stored, &w).unwrap();
    let plain: Vec<Estimate> = tail.start.iter().map(|e| Estimate { latent: e.latent.to_vec(), ..e.clone() }).collect();
    let (_, g2) = f.loss_and_grad(&SequenceData { start: plain, ..tail.clone() }, SequenceStart::Stored, &w).unwrap();
    assert_eq!(g1, g2);
    // and the stored start contributes no parameter gradient on its own
    let empty = SequenceData { steps: vec![], ..tail };
    let (stats, g0) = f.loss_and_grad(&empty, SequenceStart::Stored, &w).unwrap();
    assert_eq!(stats.samples, 0);
    assert!(g0.iter().all(|g| g.data.iter().all(|v| *v == 0.0)));
}

#[test]
fn step_count_is_reuse_times_minibatches() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let data = env_sequences(8, 8, 7, 4);
    let mut cfg = small_cfg(8, 4);
    cfg.minibatch_size = 16; // 64 samples -> 4 minibatches
    let mut est = Estimator::new(OBS, cfg.clone(), &mut rng).unwrap();
    assert_eq!(est.minibatch_count(&data), 4);
    est.cfg.data_reuse = 0;
    let before = est.f.clone();
    let m = est.train_epoch(&data, &mut rng).unwrap();
    assert_eq!(m.steps, 0);
    assert_eq!(est.f, before);
    est.cfg.data_reuse = 2;
    let m = est.train_epoch(&data, &mut rng).unwrap();
    assert_eq!(m.steps, 8);
    assert_ne!(est.f, before);
}

#[test]
fn training_reduces_held_out_loss() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let all = env_sequences(160, 16, 8, 8);
    let train = all.select(&(0..128).collect::<Vec<_>>());
    let held = all.select(&(128..160).collect::<Vec<_>>());
    let mut cfg = small_cfg(32, 8);
    cfg.minibatch_size = 128;
    cfg.lr = 5e-4;
    let obs_dim = all.steps[0].z.cols;
    let mut est = Estimator::new(obs_dim, cfg, &mut rng).unwrap();
    let w = est.cfg.loss_weights;
    let mut improved = 0;
    let first = est.f.evaluate(&held, SequenceStart::Stored, &w).unwrap().loss;
    let mut last = first;
    for _ in 0..50 {
        est.train_epoch(&train, &mut rng).unwrap();
        let now = est.f.evaluate(&held, SequenceStart::Stored, &w).unwrap().loss;
        if now <= last {
            improved += 1;
        }
        last = now;
    }
    assert!(improved >= 40, "improved in {improved}/50 iterations");
    assert!(last < first, "{last} vs {first}");
}

#[test]
fn learns_a_constant_rotation_rate() {
    // noiseless toy: the object spins at a fixed rate, observations are blank
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let n = 32;
    let len = 8;
    let rate = [0.0, 0.0, 0.08];
    let step_rot = quat_exp(Tangent3(rate));
    let mut starts = Vec::new();
    let mut steps = Vec::new();
    let mut truth: Vec<UnitQuaternion> = (0..n).map(|_| quat_exp(Tangent3(std::array::from_fn(|_| rng.random_range(-1.0..1.0))))).collect();
    let obj = |r: UnitQuaternion| ObjectState { x: [0.0; 3], r, v: [0.0; 3], w: [0.0, 0.0, 0.8] };
    let start_truth: Vec<ObjectState> = truth.iter().map(|r| obj(*r)).collect();
    for t in &start_truth {
        starts.push(init_estimate(t, 4));
    }
    for _ in 0..len {
        truth = truth.iter().map(|r| crate::manifold::quat_compose(step_rot, *r)).collect();
        steps.push(SequenceStep {
            z: Matrix::zeros(n, 4),
            u_prev: Matrix::zeros(n, N_DOF),
            truth: truth.iter().map(|r| obj(*r)).collect(),
            reset: vec![false; n],
            valid: vec![true; n],
        });
    }
    let data = SequenceData { start: starts, start_truth, steps };
    let mut cfg = small_cfg(16, 4);
    cfg.lr = 3e-3;
    cfg.minibatch_size = 256;
    let mut est = Estimator::new(4, cfg, &mut rng).unwrap();
    for _ in 0..300 {
        est.train_epoch(&data, &mut rng).unwrap();
    }
    // one step from the true previous state versus holding it
    let mut one_step = 0.0;
    let mut open_loop = 0.0;
    let w = LossWeights::default();
    for k in 1..len {
        for i in 0..n {
            let prev = init_estimate(&data.steps[k - 1].truth[i], 4);
            let pred = est.f.predict(&[0.0; 4], &[0.0; N_DOF], &prev).unwrap();
            one_step += geodesic_distance(pred.r, data.steps[k].truth[i].r).powi(2);
            open_loop += geodesic_distance(prev.r, data.steps[k].truth[i].r).powi(2);
        }
    }
    let _ = w;
    assert!(one_step < 0.25 * open_loop, "one-step {one_step} vs open-loop {open_loop}");
}
