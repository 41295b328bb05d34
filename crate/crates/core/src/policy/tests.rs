use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::nn::Adam;

fn small(input: usize, action: usize, seed: u64) -> ActorCritic {
    let cfg = PolicyConfig { hidden: vec![8, 8], value_hidden: vec![8, 8], ..PolicyConfig::default() };
    ActorCritic::new(input, action, &cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

fn random_inputs(rng: &mut impl Rng, n: usize, d: usize) -> Matrix {
    Matrix::from_vec(n, d, (0..n * d).map(|_| rng.random_range(-2.0..2.0)).collect())
}

fn perturb(ac: &mut ActorCritic, rng: &mut impl Rng) {
    for p in ac.params_mut() {
        p.data.iter_mut().for_each(|v| *v += rng.random_range(-0.3..0.3));
    }
}

#[test]
fn deterministic_actions_repeat_and_stay_in_range() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut ac = small(6, 3, 1);
    perturb(&mut ac, &mut rng);
    let x = random_inputs(&mut rng, 20, 6);
    let a = ac.act(&x, &mut ChaCha8Rng::seed_from_u64(5), true).unwrap();
    let b = ac.act(&x, &mut ChaCha8Rng::seed_from_u64(6), true).unwrap();
    assert_eq!(a, b);
    let s = ac.act(&x, &mut rng, false).unwrap();
    assert!(s.actions.data.iter().all(|u| u.abs() <= ac.action_limit));
}

#[test]
fn stochastic_samples_center_on_the_mean() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut ac = small(4, 2, 2);
    perturb(&mut ac, &mut rng);
    let n = 10_000;
    let row = [0.3, -0.7, 1.1, 0.0];
    let x = Matrix::from_vec(n, 4, row.iter().copied().cycle().take(n * 4).collect());
    let out = ac.act(&x, &mut rng, false).unwrap();
    let mean = ac.pi.forward(&ac.norm.normalize(&Matrix::row_vector(&row))).unwrap();
    let std = ac.head.std();
    for j in 0..2 {
        let m = (0..n).map(|r| out.raw.get(r, j)).sum::<f64>() / n as f64;
        let tol = 3.0 * std[j] / (n as f64).sqrt();
        assert!((m - mean.data[j]).abs() < tol, "dim {j}: {m} vs {}", mean.data[j]);
    }
}

#[test]
fn logprob_includes_the_squash_jacobian() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut ac = small(4, 3, 3);
    perturb(&mut ac, &mut rng);
    let x = random_inputs(&mut rng, 10, 4);
    let out = ac.act(&x, &mut rng, false).unwrap();
    let mean = ac.pi.forward(&out.inputs).unwrap();
    for r in 0..10 {
        let lp = ac.log_prob(mean.row(r), out.raw.row(r));
        assert!((lp - out.logprob[r]).abs() < 1e-9);
        assert!((ac.head.log_prob(mean.row(r), out.raw.row(r)) - out.raw_logprob[r]).abs() < 1e-9);
        // change of variables with a numerical derivative of the squash
        let h = 1e-6;
        let jac: f64 = out.raw.row(r).iter().map(|a| ((ac.squash(a + h) - ac.squash(a - h)) / (2.0 * h)).ln()).sum();
        assert!((out.raw_logprob[r] - jac - out.logprob[r]).abs() < 1e-6);
    }
}

#[test]
fn non_finite_policy_output_is_a_fault() {
    let mut ac = small(3, 2, 4);
    ac.pi.params_mut()[0].data[0] = f64::NAN;
    let err = ac.act(&Matrix::filled(1, 3, 1.0), &mut ChaCha8Rng::seed_from_u64(0), true);
    assert!(matches!(err, Err(Error::NonFinite { .. })));
}

/// Σ_l (γτ)^l δ_{t+l} written out term by term, stopping at episode ends.
fn brute_gae(r: &[f64], v: &[f64], d: &[bool], last: f64, gamma: f64, tau: f64) -> Vec<f64> {
    let n = r.len();
    let next_v = |t: usize| if d[t] { 0.0 } else if t + 1 < n { v[t + 1] } else { last };
    (0..n)
        .map(|t| {
            let mut total = 0.0;
            for l in t..n {
                let delta = r[l] + gamma * next_v(l) - v[l];
                total += (gamma * tau).powi((l - t) as i32) * delta;
                if d[l] {
                    break;
                }
            }
            total
        })
        .collect()
}

/// Discounted return to the end of the episode or segment, bootstrapped.
fn monte_carlo(r: &[f64], d: &[bool], last: f64, gamma: f64, t: usize) -> f64 {
    let mut g = 0.0;
    let mut disc = 1.0;
    for l in t..r.len() {
        g += disc * r[l];
        disc *= gamma;
        if d[l] {
            return g;
        }
    }
    g + disc * last
}

fn random_segment(rng: &mut impl Rng, n: usize) -> (Vec<f64>, Vec<f64>, Vec<bool>, f64) {
    let r = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let v = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
    let d = (0..n).map(|_| rng.random_bool(0.15)).collect();
    (r, v, d, rng.random_range(-3.0..3.0))
}

#[test]
fn gae_closed_forms_and_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..100 {
        let (r, v, d, last) = random_segment(&mut rng, 10);
        let (adv, _) = gae(&r, &v, &d, last, 0.0, 0.7);
        assert!(adv.iter().zip(r.iter().zip(&v)).all(|(a, (r, v))| (a - (r - v)).abs() < 1e-12));

        let (adv, ret) = gae(&r, &v, &d, last, 0.99, 1.0);
        for t in 0..10 {
            assert!((adv[t] - (monte_carlo(&r, &d, last, 0.99, t) - v[t])).abs() < 1e-10);
            assert!((ret[t] - adv[t] - v[t]).abs() < 1e-12);
        }

        let (adv, _) = gae(&r, &v, &d, last, 0.97, 0.95);
        let want = brute_gae(&r, &v, &d, last, 0.97, 0.95);
        assert!(adv.iter().zip(&want).all(|(a, b)| (a - b).abs() < 1e-10));
    }
}

#[test]
fn gae_does_not_look_past_episode_ends() {
    let r = [1.0, 2.0, 3.0, 4.0, 5.0];
    let d = [false, false, true, false, false];
    let (a1, _) = gae(&r, &[0.1, 0.2, 0.3, 0.4, 0.5], &d, 9.0, 0.9, 0.8);
    let (a2, _) = gae(&r, &[0.1, 0.2, 0.3, -7.0, 2.5], &d, -4.0, 0.9, 0.8);
    assert_eq!(a1[..3], a2[..3]);
}

#[test]
fn adaptive_learning_rate_rule() {
    let cfg = PpoConfig::default();
    assert_eq!(adapt_lr(1e-3, cfg.kl_target, &cfg), 1e-3);
    assert!((adapt_lr(1e-3, 0.0, &cfg) - 1.5e-3).abs() < 1e-15);
    assert!((adapt_lr(1e-3, 1.0, &cfg) - 1e-3 / 1.5).abs() < 1e-15);
    assert_eq!(adapt_lr(9e-3, 0.0, &cfg), 1e-2);
    let mut lr = 1e-3;
    for _ in 0..100 {
        lr = adapt_lr(lr, 1.0, &cfg);
    }
    assert_eq!(lr, 1e-6);
}

fn batch_for(ac: &ActorCritic, rng: &mut impl Rng, n: usize) -> PpoBatch {
    let x = random_inputs(rng, n, ac.input_dim());
    let out = ac.act(&x, rng, false).unwrap();
    PpoBatch {
        inputs: out.inputs,
        raw_actions: out.raw,
        // old policy slightly different so ratios straddle 1
        logprob: out.raw_logprob.iter().map(|l| l + rng.random_range(-0.1..0.1)).collect(),
        values: out.value.iter().map(|v| v + rng.random_range(-0.4..0.4)).collect(),
        advantages: (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
        returns: (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
    }
}

#[test]
fn surrogate_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut ac = small(5, 3, 6);
    perturb(&mut ac, &mut rng);
    let cfg = PpoConfig { entropy_coef: 0.01, value_coef: 0.5, ..PpoConfig::default() };
    let mb = batch_for(&ac, &mut rng, 16);
    let (_, grads) = ac.loss_and_grad(&mb, &cfg).unwrap();
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    let n_tensors = ac.params().len();
    for t in 0..n_tensors {
        for k in 0..ac.params()[t].len() {
            let eval = |delta: f64| {
                let mut c = ac.clone();
                c.params_mut()[t].data[k] += delta;
                c.loss_and_grad(&mb, &cfg).unwrap().0.total
            };
            let fd = (eval(h) - eval(-h)) / (2.0 * h);
            let a = grads[t].data[k];
            worst = worst.max((a - fd).abs() / a.abs().max(fd.abs()).max(1e-4));
        }
    }
    assert!(worst < 1e-3, "worst relative error {worst}");
}

#[test]
fn zero_advantages_leave_only_entropy_and_value_terms() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut ac = small(5, 3, 7);
    perturb(&mut ac, &mut rng);
    let cfg = PpoConfig { normalize_advantages: false, ..PpoConfig::default() };
    let mut mb = batch_for(&ac, &mut rng, 12);
    mb.advantages = vec![0.0; 12];
    let (_, grads) = ac.loss_and_grad(&mb, &cfg).unwrap();
    let n_pi = ac.pi.params().len();
    assert!(grads[..n_pi].iter().all(|g| g.data.iter().all(|v| *v == 0.0)));
    assert!(grads[n_pi].data.iter().all(|v| *v == -cfg.entropy_coef));
    assert!(grads[n_pi + 1..].iter().any(|g| g.data.iter().any(|v| *v != 0.0)));
}

#[test]
fn clipped_ratios_contribute_no_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut ac = small(5, 3, 8);
    perturb(&mut ac, &mut rng);
    let cfg = PpoConfig { normalize_advantages: false, entropy_coef: 0.0, ..PpoConfig::default() };
    let mut mb = batch_for(&ac, &mut rng, 12);
    mb.advantages = vec![1.0; 12];
    mb.logprob.iter_mut().for_each(|l| *l -= 5.0);
    let (parts, grads) = ac.loss_and_grad(&mb, &cfg).unwrap();
    assert_eq!(parts.clip_fraction, 1.0);
    assert!((parts.policy + 1.2).abs() < 1e-12);
    let n_pi = ac.pi.params().len();
    assert!(grads[..=n_pi].iter().all(|g| g.data.iter().all(|v| *v == 0.0)));
}

#[test]
fn bandit_mean_moves_to_the_rewarded_action() {
    // one state, reward 1 for pushing past +0.3 and 0 otherwise
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let cfg = PolicyConfig { hidden: vec![16], value_hidden: vec![16], init_std: 0.5, ..PolicyConfig::default() };
    let mut ac = ActorCritic::new(2, 1, &cfg, &mut rng).unwrap();
    let ppo = PpoConfig { minibatch_size: 64, ..PpoConfig::default() };
    let mut opt = Adam::new(&ac.params().iter().map(|p| p.shape()).collect::<Vec<_>>());
    let mut lr = 1e-3;
    let x = Matrix::filled(256, 2, 0.5);
    for _ in 0..200 {
        let out = ac.act(&x, &mut rng, false).unwrap();
        let rewards: Vec<f64> = out.actions.data.iter().map(|u| if *u > 0.3 { 1.0 } else { 0.0 }).collect();
        let advantages = rewards.iter().zip(&out.value).map(|(r, v)| r - v).collect();
        let batch = PpoBatch {
            inputs: out.inputs,
            raw_actions: out.raw,
            logprob: out.raw_logprob,
            values: out.value,
            advantages,
            returns: rewards,
        };
        ppo_update(&mut ac, &mut opt, &mut lr, &batch, &ppo, &mut rng).unwrap();
    }
    let mean = ac.act(&Matrix::filled(1, 2, 0.5), &mut rng, true).unwrap().actions.data[0];
    assert!(mean > 0.5, "mean action {mean}");
}

#[test]
fn kl_blowup_stops_the_update() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut ac = small(5, 3, 10);
    let mut mb = batch_for(&ac, &mut rng, 32);
    mb.logprob.iter_mut().for_each(|l| *l += 3.0);
    let before = ac.clone();
    let mut opt = Adam::new(&ac.params().iter().map(|p| p.shape()).collect::<Vec<_>>());
    let mut lr = 1e-3;
    let m = ppo_update(&mut ac, &mut opt, &mut lr, &mb, &PpoConfig::default(), &mut rng).unwrap();
    assert!(m.early_stopped);
    assert_eq!(m.steps, 0);
    assert_eq!(ac, before);
}
