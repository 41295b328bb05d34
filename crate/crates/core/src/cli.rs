//! Command-line front end: training runs with manifests and resumable
//! checkpoints, benchmarks, failure demos and checkpoint inspection.
//!
//! Configuration is layered: built-in defaults, then an optional TOML file,
//! then command-line flags.

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bench::failure::{self, FailureCase};
use crate::bench::{run_benchmark, run_consecutive, BenchConfig};
use crate::error::{Error, Result};
use crate::nn::Checkpoint;
use crate::trainer::{Agent, MetricsLog, TrainConfig, TrainMode, TrainState};

/// Default output root when `--out` is not given.
pub const OUT_ENV: &str = "ECRL_OUT";

#[derive(Debug, Parser)]
#[command(name = "ecrl", version, about = "Estimator-coupled RL for blind in-hand reorientation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one mode; writes a run directory under the output root.
    Train(TrainArgs),
    /// Benchmark a checkpoint on every goal orientation.
    Bench(BenchArgs),
    /// Emit trajectories of the tipping or drift failure of a naive policy.
    FailureDemo(DemoArgs),
    /// Print what a checkpoint contains.
    InspectCheckpoint(InspectArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct TrainArgs {
    /// TOML file with sections mirroring the module configs.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub mode: Option<TrainMode>,
    #[arg(long)]
    pub object: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub n_envs: Option<usize>,
    #[arg(long)]
    pub workers: Option<usize>,
    /// Output root; defaults to $ECRL_OUT, then `runs`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Continue an existing run directory from its last checkpoint.
    #[arg(long)]
    pub resume: bool,
    /// Start from the networks of another checkpoint (required for estimada).
    #[arg(long)]
    pub init_from: Option<PathBuf>,
    /// Print a progress line every this many iterations; 0 is silent.
    #[arg(long, default_value_t = 10)]
    pub log_every: usize,
}

#[derive(Debug, Clone, Args)]
pub struct BenchArgs {
    pub checkpoint: PathBuf,
    /// Must match the checkpoint's mode when given.
    #[arg(long, value_enum)]
    pub mode: Option<TrainMode>,
    #[arg(long, default_value_t = 50)]
    pub trials: usize,
    /// Also run this many consecutive-goal trials.
    #[arg(long)]
    pub consecutive: Option<usize>,
    #[arg(long, default_value_t = 100)]
    pub cap: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Defaults to a `bench-<mode>` directory next to the checkpoint.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct DemoArgs {
    pub checkpoint: PathBuf,
    #[arg(long, value_enum)]
    pub case: FailureCase,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value_t = 20)]
    pub repeats: usize,
    /// Length of the drift sequence, s.
    #[arg(long, default_value_t = 20.0)]
    pub duration: f64,
    /// Defaults to a `failure-<case>` directory next to the checkpoint.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct InspectArgs {
    pub checkpoint: PathBuf,
    /// Print the summary as JSON.
    #[arg(long)]
    pub json: bool,
}

/// Written once before the first training step and never modified.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: TrainConfig,
    pub config_hash: String,
    pub seed: u64,
    pub mode: TrainMode,
    pub object: String,
    pub version: String,
    pub started_at: u64,
    pub init_from: Option<PathBuf>,
    pub manifest: PathBuf,
    pub metrics: PathBuf,
    pub checkpoint: PathBuf,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        serde_json::from_slice(&bytes).map_err(|e| Error::Invalid(format!("{}: {e}", path.display())))
    }
}

pub fn version_string() -> String {
    match option_env!("ECRL_GIT_DESCRIBE") {
        Some(d) => format!("{} ({d})", env!("CARGO_PKG_VERSION")),
        None => env!("CARGO_PKG_VERSION").to_string(),
    }
}

pub fn load_config(path: &Path) -> Result<TrainConfig> {
    let text = std::fs::read_to_string(path)?;
    toml::from_str(&text).map_err(|e| Error::config(path.display().to_string(), e.to_string()))
}

/// Defaults, then the config file, then flags.
pub fn resolve_config(args: &TrainArgs) -> Result<TrainConfig> {
    let mut cfg = match &args.config {
        Some(p) => load_config(p)?,
        None => TrainConfig::default(),
    };
    if let Some(m) = args.mode {
        cfg.mode = m;
    }
    if let Some(o) = &args.object {
        cfg.object = o.clone();
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(i) = args.iterations {
        cfg.iterations = i;
    }
    if let Some(n) = args.n_envs {
        cfg.n_envs = n;
    }
    if let Some(w) = args.workers {
        cfg.workers = w;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Hash of everything that shapes the trajectory of a run. The iteration
/// budget and worker count are left out so a run can be extended.
pub fn config_hash(cfg: &TrainConfig) -> String {
    let mut c = cfg.clone();
    c.iterations = 0;
    c.workers = 1;
    let bytes = serde_json::to_vec(&c).expect("config serializes");
    Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn run_name(cfg: &TrainConfig) -> String {
    format!("{}-{}-s{}-{}", cfg.mode, cfg.object, cfg.seed, &config_hash(cfg)[..12])
}

pub fn out_root(flag: Option<&Path>) -> PathBuf {
    match flag {
        Some(p) => p.to_path_buf(),
        None => std::env::var_os(OUT_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("runs")),
    }
}

/// Drops metric rows past `iteration`, left behind by a run that stopped
/// after its last checkpoint.
fn truncate_metrics(path: &Path, iteration: u64) -> Result<()> {
    if !path.exists() {
        return Ok(());
    }
    let text = std::fs::read_to_string(path)?;
    let mut kept = String::new();
    for (k, line) in text.lines().enumerate() {
        let it = line.split(',').next().and_then(|f| f.parse::<u64>().ok());
        if k == 0 || it.is_some_and(|i| i < iteration) {
            kept.push_str(line);
            kept.push('\n');
        }
    }
    std::fs::write(path, kept)?;
    Ok(())
}

pub fn cmd_train(args: &TrainArgs) -> Result<PathBuf> {
    let cfg = resolve_config(args)?;
    let dir = out_root(args.out.as_deref()).join(run_name(&cfg));
    let manifest_path = dir.join("manifest.json");
    let metrics_path = dir.join("metrics.csv");
    let ckpt_path = dir.join("checkpoint.json");

    let mut state = if manifest_path.exists() {
        if !args.resume {
            return Err(Error::Invalid(format!("run directory {} already exists; pass --resume to continue it", dir.display())));
        }
        let m = RunManifest::load(&manifest_path)?;
        if m.config_hash != config_hash(&cfg) {
            return Err(Error::Invalid(format!("{} was written by a different config", manifest_path.display())));
        }
        let mut st = if ckpt_path.exists() { TrainState::restore(&ckpt_path)? } else { fresh_state(&cfg, m.init_from.as_deref())? };
        st.cfg.iterations = cfg.iterations;
        st.cfg.workers = cfg.workers;
        st.venv.workers = cfg.workers.max(1);
        truncate_metrics(&metrics_path, st.iteration)?;
        st
    } else {
        let st = fresh_state(&cfg, args.init_from.as_deref())?;
        std::fs::create_dir_all(&dir)?;
        let manifest = RunManifest {
            config: cfg.clone(),
            config_hash: config_hash(&cfg),
            seed: cfg.seed,
            mode: cfg.mode,
            object: cfg.object.clone(),
            version: version_string(),
            started_at: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
            init_from: args.init_from.clone(),
            manifest: manifest_path.clone(),
            metrics: metrics_path.clone(),
            checkpoint: ckpt_path.clone(),
        };
        std::fs::write(&manifest_path, serde_json::to_vec_pretty(&manifest)?)?;
        st
    };

    let mut log = MetricsLog::open(&metrics_path)?;
    let every = cfg.checkpoint_every.max(1) as u64;
    while (state.iteration as usize) < cfg.iterations {
        let m = state.train_iteration()?;
        log.write(&m)?;
        if args.log_every > 0 && (m.iteration as usize % args.log_every == 0 || m.iteration as usize + 1 == cfg.iterations) {
            eprintln!(
                "[{}] it {} rho {:.3} reward {:.2} success {:.3} drops {} est_err {:.3} kl {:.4}",
                cfg.mode, m.iteration, m.rho, m.reward_mean, m.success_rate, m.drops, m.est_rot_err, m.approx_kl
            );
        }
        if state.iteration % every == 0 {
            state.save(&ckpt_path)?;
        }
    }
    state.save(&ckpt_path)?;
    Ok(dir)
}

fn fresh_state(cfg: &TrainConfig, init_from: Option<&Path>) -> Result<TrainState> {
    let mut st = TrainState::new(cfg.clone())?;
    match init_from {
        Some(p) => st.adopt(&Agent::load(p)?)?,
        None if cfg.mode == TrainMode::Estimada => {
            return Err(Error::config("mode", "estimada adapts a trained policy; pass --init-from <oracle checkpoint>"));
        }
        None => {}
    }
    Ok(st)
}

fn sibling(checkpoint: &Path, name: &str) -> PathBuf {
    checkpoint.parent().unwrap_or(Path::new(".")).join(name)
}

fn load_agent(path: &Path) -> Result<Agent> {
    if !path.exists() {
        return Err(Error::checkpoint(path, "no such file"));
    }
    Agent::load(path)
}

pub fn cmd_bench(args: &BenchArgs, out: &mut impl std::io::Write) -> Result<PathBuf> {
    let agent = load_agent(&args.checkpoint)?;
    let mode = agent.cfg.mode;
    if let Some(m) = args.mode {
        if m != mode {
            return Err(Error::Invalid(format!("checkpoint was trained as `{mode}`, not `{m}`")));
        }
    }
    let cfg = BenchConfig {
        n_trials: args.trials,
        seed: args.seed,
        consecutive_trials: args.consecutive.unwrap_or(1),
        consecutive_cap: args.cap,
    };
    let dir = args.out.clone().unwrap_or_else(|| sibling(&args.checkpoint, &format!("bench-{mode}")));
    let report = run_benchmark(&agent, mode, &cfg)?;
    report.write(&dir)?;
    writeln!(
        out,
        "{mode} {}: B = {:.1}% over {} rollouts; estimator error {:.3} ± {:.3} rad ({})",
        report.object,
        report.success_rate,
        report.trials.len(),
        report.est_error_mean,
        report.est_error_std,
        report.est_error_averaging
    )?;
    if args.consecutive.is_some() {
        let c = run_consecutive(&agent, mode, &cfg)?;
        c.write(&dir)?;
        writeln!(out, "consecutive successes: median {} {}", c.median, c.counts_list())?;
    }
    Ok(dir)
}

pub fn cmd_failure_demo(args: &DemoArgs, out: &mut impl std::io::Write) -> Result<PathBuf> {
    let agent = load_agent(&args.checkpoint)?;
    let name = match args.case {
        FailureCase::Tipping => "tipping",
        FailureCase::Drift => "drift",
    };
    let dir = args.out.clone().unwrap_or_else(|| sibling(&args.checkpoint, &format!("failure-{name}")));
    std::fs::create_dir_all(&dir)?;
    let path = dir.join(format!("{name}.csv"));
    match args.case {
        FailureCase::Tipping => {
            let rows = failure::tipping_demo(&agent, args.seed, args.repeats)?;
            failure::write_tipping(&path, &rows)?;
            let finals = failure::final_angles(&rows);
            let lo = finals.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = finals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            writeln!(out, "tipping: {} repeats, final angle spread {:.3} rad [{lo:.3}, {hi:.3}]", finals.len(), hi - lo)?;
        }
        FailureCase::Drift => {
            let rows = failure::drift_demo(&agent, args.seed, args.repeats, args.duration)?;
            failure::write_drift(&path, &rows)?;
            let curve = failure::drift_error_curve(&rows);
            writeln!(out, "drift: |x3 error| trend {:.2e} m/s over {:.1} s", failure::trend_slope(&curve), args.duration)?;
        }
    }
    Ok(path)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckpointSummary {
    pub kind: String,
    pub format_version: u32,
    pub mode: Option<String>,
    pub object: Option<String>,
    pub iteration: Option<u64>,
    pub parameters: usize,
    pub tensors: Vec<(String, [usize; 2])>,
    pub optimizers: Vec<(String, u64, f64)>,
}

pub fn inspect_checkpoint(path: &Path) -> Result<CheckpointSummary> {
    let ck = Checkpoint::load(path)?;
    let cfg = ck.meta.get("config");
    let text = |v: Option<&serde_json::Value>| v.and_then(|v| v.as_str()).map(String::from);
    Ok(CheckpointSummary {
        kind: ck.kind.clone(),
        format_version: ck.format_version,
        mode: text(cfg.and_then(|c| c.get("mode"))),
        object: text(cfg.and_then(|c| c.get("object"))),
        iteration: ck.meta.get("iteration").and_then(|v| v.as_u64()),
        parameters: ck.tensors.iter().map(|t| t.data.len()).sum(),
        tensors: ck.tensors.iter().map(|t| (t.name.clone(), t.shape)).collect(),
        optimizers: ck.optimizers.iter().map(|o| (o.group.clone(), o.step, o.lr)).collect(),
    })
}

pub fn cmd_inspect(args: &InspectArgs, out: &mut impl std::io::Write) -> Result<()> {
    let s = inspect_checkpoint(&args.checkpoint)?;
    if args.json {
        writeln!(out, "{}", serde_json::to_string_pretty(&s)?)?;
        return Ok(());
    }
    let or = |v: &Option<String>| v.clone().unwrap_or_else(|| "-".into());
    writeln!(out, "kind {} (format {})", s.kind, s.format_version)?;
    writeln!(out, "mode {} object {} iteration {}", or(&s.mode), or(&s.object), s.iteration.map_or("-".into(), |i| i.to_string()))?;
    writeln!(out, "{} parameters in {} tensors", s.parameters, s.tensors.len())?;
    for (name, shape) in &s.tensors {
        writeln!(out, "  {name:<20} {}x{}", shape[0], shape[1])?;
    }
    for (group, step, lr) in &s.optimizers {
        writeln!(out, "  optimizer {group}: step {step}, lr {lr:.2e}")?;
    }
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    let mut stdout = std::io::stdout().lock();
    match cli.command {
        Command::Train(a) => {
            let dir = cmd_train(&a)?;
            writeln!(stdout, "{}", dir.display())?;
        }
        Command::Bench(a) => {
            cmd_bench(&a, &mut stdout)?;
        }
        Command::FailureDemo(a) => {
            let path = cmd_failure_demo(&a, &mut stdout)?;
            writeln!(stdout, "{}", path.display())?;
        }
        Command::InspectCheckpoint(a) => cmd_inspect(&a, &mut stdout)?,
    }
    Ok(())
}
