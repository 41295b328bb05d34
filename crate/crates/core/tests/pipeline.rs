use std::path::Path;
use std::process::Command;
use std::time::Instant;

use ecrl::bench::{run_benchmark, BenchConfig};
use ecrl::trainer::{TrainConfig, TrainMode, TrainState};

const TINY: &str = r#"
n_envs = 4
rollout_len = 8
checkpoint_every = 1

[estimator]
hidden = [16]
latent_dim = 4
minibatch_size = 8

[policy]
hidden = [16]
value_hidden = [8]

[ppo]
minibatch_size = 16
"#;

fn tiny(mode: TrainMode) -> TrainConfig {
    TrainConfig { mode, ..toml::from_str(TINY).unwrap() }
}

fn ecrl(args: &[&str], out: &Path) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_ecrl")).args(args).env("ECRL_OUT", out).output().unwrap()
}

#[test]
fn naive_and_oracle_share_a_policy_and_differ_only_in_inputs() {
    let mut naive = TrainState::new(tiny(TrainMode::Naive)).unwrap();
    let mut oracle = TrainState::new(tiny(TrainMode::Oracle)).unwrap();
    for _ in 0..3 {
        naive.train_iteration().unwrap();
        oracle.train_iteration().unwrap();
    }
    let (n, o) = (naive.agent(), oracle.agent());
    assert_eq!(n.ac.param_hash(), o.ac.param_hash());
    assert_ne!(n.f, o.f, "only the naive run trains its estimator");
    let cfg = BenchConfig { n_trials: 1, ..BenchConfig::default() };
    let on_truth = run_benchmark(&n, TrainMode::Oracle, &cfg).unwrap();
    let on_estimates = run_benchmark(&n, TrainMode::Naive, &cfg).unwrap();
    assert_eq!(on_truth.trials.len(), 24);
    assert_eq!(on_estimates.trials.len(), 24);
}

#[test]
fn estimada_adapts_only_the_estimator() {
    let mut oracle = TrainState::new(tiny(TrainMode::Oracle)).unwrap();
    for _ in 0..2 {
        oracle.train_iteration().unwrap();
    }
    let source = oracle.agent();
    let mut ada = TrainState::new(tiny(TrainMode::Estimada)).unwrap();
    ada.adopt(&source).unwrap();
    for _ in 0..3 {
        let m = ada.train_iteration().unwrap();
        assert_eq!(m.rho, 0.0);
        assert_eq!(m.ppo_steps, 0);
    }
    let adapted = ada.agent();
    assert_eq!(adapted.ac.param_hash(), source.ac.param_hash());
    assert_ne!(adapted.f, source.f);
}

#[test]
fn cli_smoke_run_then_bench_and_inspect() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tiny.toml");
    std::fs::write(&cfg, TINY).unwrap();
    let t = Instant::now();
    let out = ecrl(&["train", "--config", cfg.to_str().unwrap(), "--mode", "naive", "--iterations", "2", "--log-every", "0"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(t.elapsed().as_secs() < 60);
    let run = String::from_utf8(out.stdout).unwrap().trim().to_string();
    assert!(run.starts_with(dir.path().to_str().unwrap()), "ECRL_OUT chooses the root: {run}");
    let ckpt = Path::new(&run).join("checkpoint.json");

    let bench = ecrl(&["bench", ckpt.to_str().unwrap(), "--trials", "1", "--consecutive", "2", "--cap", "2"], dir.path());
    assert!(bench.status.success(), "{}", String::from_utf8_lossy(&bench.stderr));
    assert!(String::from_utf8_lossy(&bench.stdout).contains("B = "));

    let inspect = ecrl(&["inspect-checkpoint", ckpt.to_str().unwrap()], dir.path());
    assert!(inspect.status.success());
    assert!(String::from_utf8_lossy(&inspect.stdout).contains("policy.pi.0"));

    let demo = ecrl(&["failure-demo", ckpt.to_str().unwrap(), "--case", "drift", "--duration", "1"], dir.path());
    assert!(demo.status.success(), "{}", String::from_utf8_lossy(&demo.stderr));
}

#[test]
fn cli_rejects_bad_input() {
    let dir = tempfile::tempdir().unwrap();
    let out = ecrl(&["train", "--mode", "greedy"], dir.path());
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("oracle") && err.contains("estimada"), "{err}");

    let out = ecrl(&["bench", dir.path().join("missing.json").to_str().unwrap()], dir.path());
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.json"));
}
