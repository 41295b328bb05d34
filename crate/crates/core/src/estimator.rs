//! Recursive on-manifold state estimator.
//!
//! The network maps `(z_t, u_{t-1}, ŝ_{t-1})` to a tangent increment that is
//! applied to the previous estimate with `⊞`, so a zero network is the
//! identity map. Training unrolls the recursion over stored rollout
//! segments and backpropagates a weighted rmse through the whole segment.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::{ObjectState, N_DOF};
use crate::error::{Error, Result};
use crate::manifold::{UnitQuaternion, Vec3};
use crate::nn::{clip_global_norm, Activation, Adam, DenseSkipNet, Matrix, Tape, Var};

/// Estimated object state augmented with a latent memory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub x: Vec3,
    pub r: UnitQuaternion,
    pub v: Vec3,
    pub w: Vec3,
    pub latent: Vec<f64>,
}

impl Estimate {
    pub fn zeros(latent_dim: usize) -> Self {
        Estimate { x: [0.0; 3], r: UnitQuaternion::IDENTITY, v: [0.0; 3], w: [0.0; 3], latent: vec![0.0; latent_dim] }
    }

    pub fn is_finite(&self) -> bool {
        self.x.iter().chain(&self.v).chain(&self.w).chain(&self.latent).all(|v| v.is_finite())
            && self.r.to_array().iter().all(|v| v.is_finite())
    }

    /// The tracked physical state, without the latent.
    pub fn object(&self) -> ObjectState {
        ObjectState { x: self.x, r: self.r, v: self.v, w: self.w }
    }

    /// The estimate with the pose replaced by ground truth.
    pub fn with_pose(&self, truth: &ObjectState) -> Self {
        Estimate { x: truth.x, r: truth.r, ..self.clone() }
    }
}

/// Estimate at the start of an episode: the known grasp pose, zero
/// velocities and latent.
pub fn init_estimate(s0: &ObjectState, latent_dim: usize) -> Estimate {
    Estimate { x: s0.x, r: s0.r, ..Estimate::zeros(latent_dim) }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SequenceStart {
    /// The closed-loop estimate stored during the rollout.
    Stored,
    /// Stored estimate with the pose replaced by ground truth.
    GroundTruth,
}

/// Per-group weights of the rmse loss: position, rotation, velocity,
/// angular velocity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub position: f64,
    pub rotation: f64,
    pub velocity: f64,
    pub angular_velocity: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { position: 1.0, rotation: 1.0, velocity: 0.1, angular_velocity: 0.1 }
    }
}

/// Physical scales used to normalise network inputs and outputs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StateScales {
    pub position: f64,
    pub rotation: f64,
    pub velocity: f64,
    pub angular_velocity: f64,
    pub latent: f64,
}

impl Default for StateScales {
    fn default() -> Self {
        StateScales { position: 0.01, rotation: 0.1, velocity: 0.1, angular_velocity: 1.0, latent: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorConfig {
    pub hidden: Vec<usize>,
    pub latent_dim: usize,
    pub lr: f64,
    /// Data reuse `k`: passes over the minibatches per iteration.
    pub data_reuse: usize,
    /// Samples (steps) per minibatch.
    pub minibatch_size: usize,
    pub loss_weights: LossWeights,
    pub scales: StateScales,
    pub sequence_start: SequenceStart,
    /// Gradient norms above this are clipped down to `clip_norm`.
    pub clip_threshold: f64,
    pub clip_norm: f64,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        EstimatorConfig {
            hidden: vec![64, 64, 64, 64],
            latent_dim: 32,
            lr: 5e-4,
            data_reuse: 2,
            minibatch_size: 1024,
            loss_weights: LossWeights::default(),
            scales: StateScales::default(),
            sequence_start: SequenceStart::Stored,
            clip_threshold: 100.0,
            clip_norm: 10.0,
        }
    }
}

impl EstimatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden.iter().any(|w| *w == 0) {
            return Err(Error::config("estimator.hidden", "layer widths must be positive"));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::config("estimator.lr", "must be positive"));
        }
        if self.minibatch_size == 0 {
            return Err(Error::config("estimator.minibatch_size", "must be positive"));
        }
        let s = self.scales;
        if [s.position, s.rotation, s.velocity, s.angular_velocity, s.latent].iter().any(|v| !(*v > 0.0)) {
            return Err(Error::config("estimator.scales", "all scales must be positive"));
        }
        Ok(())
    }
}

/// One step of a batch of stored sequences, one row per sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceStep {
    pub z: Matrix,
    pub u_prev: Matrix,
    pub truth: Vec<ObjectState>,
    /// The estimate was re-initialized from the known state at this step.
    pub reset: Vec<bool>,
    /// Rows that contribute to the loss.
    pub valid: Vec<bool>,
}

/// Contiguous rollout segments: the estimate before the first step, then
/// one [`SequenceStep`] per control step.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceData {
    pub start: Vec<Estimate>,
    pub start_truth: Vec<ObjectState>,
    pub steps: Vec<SequenceStep>,
}

impl SequenceData {
    pub fn sequences(&self) -> usize {
        self.start.len()
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn select(&self, idx: &[usize]) -> SequenceData {
        SequenceData {
            start: idx.iter().map(|&i| self.start[i].clone()).collect(),
            start_truth: idx.iter().map(|&i| self.start_truth[i]).collect(),
            steps: self
                .steps
                .iter()
                .map(|s| SequenceStep {
                    z: s.z.select_rows(idx),
                    u_prev: s.u_prev.select_rows(idx),
                    truth: idx.iter().map(|&i| s.truth[i]).collect(),
                    reset: idx.iter().map(|&i| s.reset[i]).collect(),
                    valid: idx.iter().map(|&i| s.valid[i]).collect(),
                })
                .collect(),
        }
    }
}

/// Root-mean-square errors per state group over the predicted steps.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub loss: f64,
    pub rmse_pos: f64,
    pub rmse_rot: f64,
    pub rmse_vel: f64,
    pub rmse_ang: f64,
    pub samples: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct EstimatorMetrics {
    pub steps: usize,
    pub first_loss: f64,
    pub mean_loss: f64,
    pub last_loss: f64,
    pub clipped: usize,
    pub max_grad_norm: f64,
}

/// Weighted error of a single estimate; the rmse over a batch is the root
/// of the mean of its square.
pub fn loss(pred: &Estimate, truth: &ObjectState, w: &LossWeights) -> f64 {
    use crate::manifold::{geodesic_distance, v3};
    let sq = |a: Vec3, b: Vec3| v3::norm(v3::sub(a, b)).powi(2);
    (w.position.powi(2) * sq(pred.x, truth.x)
        + w.rotation.powi(2) * geodesic_distance(pred.r, truth.r).powi(2)
        + w.velocity.powi(2) * sq(pred.v, truth.v)
        + w.angular_velocity.powi(2) * sq(pred.w, truth.w))
    .sqrt()
}

#[derive(Clone, Copy)]
struct TapeEstimate {
    x: Var,
    q: Var,
    v: Var,
    w: Var,
    l: Var,
}

struct StepTerms {
    pos: Var,
    rot: Var,
    vel: Var,
    ang: Var,
    mask: Vec<bool>,
}

fn rows3(m: impl Iterator<Item = Vec3>) -> Matrix {
    let data: Vec<f64> = m.flatten().collect();
    Matrix::from_vec(data.len() / 3, 3, data)
}

fn quat_rows(m: impl Iterator<Item = UnitQuaternion>) -> Matrix {
    let data: Vec<f64> = m.flat_map(|q| q.to_array()).collect();
    let n = data.len() / 4;
    Matrix::from_vec(n, 4, data)
}

/// The estimator network `f`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorNet {
    pub net: DenseSkipNet,
    pub obs_dim: usize,
    pub latent_dim: usize,
    pub scales: StateScales,
}

impl EstimatorNet {
    pub fn input_dim(obs_dim: usize, latent_dim: usize) -> usize {
        obs_dim + N_DOF + 3 + 6 + 3 + 3 + latent_dim
    }

    pub fn new(obs_dim: usize, cfg: &EstimatorConfig, rng: &mut impl Rng) -> Self {
        let mut net = DenseSkipNet::new(
            Self::input_dim(obs_dim, cfg.latent_dim),
            &cfg.hidden,
            12 + cfg.latent_dim,
            Activation::Elu,
        );
        net.init_orthogonal(rng, 2f64.sqrt(), 0.01);
        EstimatorNet { net, obs_dim, latent_dim: cfg.latent_dim, scales: cfg.scales }
    }

    fn leaves(&self, tape: &mut Tape, est: &[Estimate]) -> TapeEstimate {
        let latent: Vec<f64> = est.iter().flat_map(|e| e.latent.iter().copied()).collect();
        TapeEstimate {
            x: tape.constant(rows3(est.iter().map(|e| e.x))),
            q: tape.constant(quat_rows(est.iter().map(|e| e.r))),
            v: tape.constant(rows3(est.iter().map(|e| e.v))),
            w: tape.constant(rows3(est.iter().map(|e| e.w))),
            l: tape.constant(Matrix::from_vec(est.len(), self.latent_dim, latent)),
        }
    }

    /// One recursive update on the tape.
    fn step(&self, tape: &mut Tape, z: Var, u: Var, prev: TapeEstimate) -> Result<TapeEstimate> {
        let s = self.scales;
        let xs = tape.scale(prev.x, 1.0 / s.position);
        let six = tape.quat_to_6d(prev.q);
        let vs = tape.scale(prev.v, 1.0 / s.velocity);
        let ws = tape.scale(prev.w, 1.0 / s.angular_velocity);
        let input = tape.concat(&[z, u, xs, six, vs, ws, prev.l]);
        let out = self.net.forward_tape(tape, input)?;
        let part = |tape: &mut Tape, start: usize, len: usize, scale: f64| {
            let c = tape.col_slice(out, start, len);
            tape.scale(c, scale)
        };
        let dx = part(tape, 0, 3, s.position);
        let dr = part(tape, 3, 3, s.rotation);
        let dv = part(tape, 6, 3, s.velocity);
        let dw = part(tape, 9, 3, s.angular_velocity);
        let dl = part(tape, 12, self.latent_dim, s.latent);
        let x = tape.add(prev.x, dx);
        let e = tape.quat_exp(dr);
        let q = tape.quat_mul(e, prev.q);
        let q = tape.normalize(q);
        let q = tape.canonical(q);
        let v = tape.add(prev.v, dv);
        let w = tape.add(prev.w, dw);
        let l = tape.add(prev.l, dl);
        let l = tape.tanh(l);
        Ok(TapeEstimate { x, q, v, w, l })
    }

    fn read(&self, tape: &Tape, st: TapeEstimate) -> Result<Vec<Estimate>> {
        let (x, q, v, w, l) = (tape.value(st.x), tape.value(st.q), tape.value(st.v), tape.value(st.w), tape.value(st.l));
        let mut out = Vec::with_capacity(x.rows);
        for r in 0..x.rows {
            let qr = q.row(r);
            let e = Estimate {
                x: [x.get(r, 0), x.get(r, 1), x.get(r, 2)],
                r: UnitQuaternion { w: qr[0], x: qr[1], y: qr[2], z: qr[3] },
                v: [v.get(r, 0), v.get(r, 1), v.get(r, 2)],
                w: [w.get(r, 0), w.get(r, 1), w.get(r, 2)],
                latent: l.row(r).to_vec(),
            };
            if !e.is_finite() {
                return Err(Error::NonFinite { what: "estimator output", detail: format!("row {r}: {e:?}") });
            }
            out.push(e);
        }
        Ok(out)
    }

    fn check_dims(&self, z: &Matrix, u: &Matrix, prev: &[Estimate]) -> Result<()> {
        self.check_step(z, u, prev.len())?;
        if let Some(e) = prev.iter().find(|e| e.latent.len() != self.latent_dim) {
            return Err(Error::Dimension { what: "estimator latent", expected: self.latent_dim, got: e.latent.len() });
        }
        Ok(())
    }

    fn check_step(&self, z: &Matrix, u: &Matrix, rows: usize) -> Result<()> {
        if z.cols != self.obs_dim {
            return Err(Error::Dimension { what: "estimator observation", expected: self.obs_dim, got: z.cols });
        }
        if u.cols != N_DOF {
            return Err(Error::Dimension { what: "estimator previous action", expected: N_DOF, got: u.cols });
        }
        if z.rows != rows || u.rows != rows {
            return Err(Error::Dimension { what: "estimator batch", expected: rows, got: z.rows.min(u.rows) });
        }
        Ok(())
    }

    /// `ŝ_t = f(z_t, u_{t-1}, ŝ_{t-1})` for a batch of rows.
    pub fn predict_batch(&self, z: &Matrix, u_prev: &Matrix, prev: &[Estimate]) -> Result<Vec<Estimate>> {
        self.check_dims(z, u_prev, prev)?;
        let mut tape = Tape::new();
        let zv = tape.constant(z.clone());
        let uv = tape.constant(u_prev.clone());
        let st = self.leaves(&mut tape, prev);
        let next = self.step(&mut tape, zv, uv, st)?;
        self.read(&tape, next)
    }

    pub fn predict(&self, z: &[f64], u_prev: &[f64], prev: &Estimate) -> Result<Estimate> {
        let out = self.predict_batch(&Matrix::row_vector(z), &Matrix::row_vector(u_prev), std::slice::from_ref(prev))?;
        Ok(out.into_iter().next().expect("one row in, one row out"))
    }

    /// Unrolls the recursion over `data`, returning per-step error terms.
    fn unroll(&self, tape: &mut Tape, data: &SequenceData, start: SequenceStart) -> Result<Vec<StepTerms>> {
        let first: Vec<Estimate> = match start {
            SequenceStart::Stored => data.start.clone(),
            SequenceStart::GroundTruth => data.start.iter().zip(&data.start_truth).map(|(e, t)| e.with_pose(t)).collect(),
        };
        if let Some(e) = first.iter().find(|e| e.latent.len() != self.latent_dim) {
            return Err(Error::Dimension { what: "estimator latent", expected: self.latent_dim, got: e.latent.len() });
        }
        let mut st = self.leaves(tape, &first);
        let mut terms = Vec::with_capacity(data.steps.len());
        for step in &data.steps {
            self.check_step(&step.z, &step.u_prev, first.len())?;
            let zv = tape.constant(step.z.clone());
            let uv = tape.constant(step.u_prev.clone());
            let pred = self.step(tape, zv, uv, st)?;
            let tx = tape.constant(rows3(step.truth.iter().map(|t| t.x)));
            let tq = tape.constant(quat_rows(step.truth.iter().map(|t| t.r)));
            let tv = tape.constant(rows3(step.truth.iter().map(|t| t.v)));
            let tw = tape.constant(rows3(step.truth.iter().map(|t| t.w)));
            let ex = tape.sub(pred.x, tx);
            let ev = tape.sub(pred.v, tv);
            let ew = tape.sub(pred.w, tw);
            let pos = tape.row_sum_sq(ex);
            let rot = tape.geodesic_sq(pred.q, tq);
            let vel = tape.row_sum_sq(ev);
            let ang = tape.row_sum_sq(ew);
            let mask: Vec<bool> = step.reset.iter().zip(&step.valid).map(|(r, v)| !r && *v).collect();
            terms.push(StepTerms { pos, rot, vel, ang, mask });
            st = if step.reset.iter().any(|r| *r) {
                let init: Vec<Estimate> = step.truth.iter().map(|t| init_estimate(t, self.latent_dim)).collect();
                let init = self.leaves(tape, &init);
                TapeEstimate {
                    x: tape.row_select(init.x, pred.x, step.reset.clone()),
                    q: tape.row_select(init.q, pred.q, step.reset.clone()),
                    v: tape.row_select(init.v, pred.v, step.reset.clone()),
                    w: tape.row_select(init.w, pred.w, step.reset.clone()),
                    l: tape.row_select(init.l, pred.l, step.reset.clone()),
                }
            } else {
                pred
            };
        }
        Ok(terms)
    }

    fn reduce(tape: &Tape, terms: &[StepTerms], w: &LossWeights) -> LossBreakdown {
        let mut sums = [0.0; 4];
        let mut n = 0usize;
        for t in terms {
            for (r, &m) in t.mask.iter().enumerate() {
                if m {
                    n += 1;
                    for (k, v) in [t.pos, t.rot, t.vel, t.ang].iter().enumerate() {
                        sums[k] += tape.value(*v).data[r];
                    }
                }
            }
        }
        if n == 0 {
            return LossBreakdown::default();
        }
        let nf = n as f64;
        let weighted = w.position.powi(2) * sums[0]
            + w.rotation.powi(2) * sums[1]
            + w.velocity.powi(2) * sums[2]
            + w.angular_velocity.powi(2) * sums[3];
        LossBreakdown {
            loss: (weighted / nf).sqrt(),
            rmse_pos: (sums[0] / nf).sqrt(),
            rmse_rot: (sums[1] / nf).sqrt(),
            rmse_vel: (sums[2] / nf).sqrt(),
            rmse_ang: (sums[3] / nf).sqrt(),
            samples: n,
        }
    }

    /// Sequence loss without gradients.
    pub fn evaluate(&self, data: &SequenceData, start: SequenceStart, weights: &LossWeights) -> Result<LossBreakdown> {
        let mut tape = Tape::new();
        let terms = self.unroll(&mut tape, data, start)?;
        Ok(Self::reduce(&tape, &terms, weights))
    }

    /// Sequence loss and its gradient with respect to the network
    /// parameters, by backpropagation through the unrolled recursion.
    pub fn loss_and_grad(
        &self,
        data: &SequenceData,
        start: SequenceStart,
        weights: &LossWeights,
    ) -> Result<(LossBreakdown, Vec<Matrix>)> {
        let mut tape = Tape::new();
        let terms = self.unroll(&mut tape, data, start)?;
        let stats = Self::reduce(&tape, &terms, weights);
        let params = self.net.param_refs();
        if stats.samples == 0 || stats.loss == 0.0 {
            return Ok((stats, params.iter().map(|p| Matrix::zeros(p.rows, p.cols)).collect()));
        }
        let base = 1.0 / (2.0 * stats.loss * stats.samples as f64);
        let coef = [
            weights.position.powi(2),
            weights.rotation.powi(2),
            weights.velocity.powi(2),
            weights.angular_velocity.powi(2),
        ];
        let mut seeds = Vec::with_capacity(terms.len() * 4);
        for t in &terms {
            for (k, v) in [t.pos, t.rot, t.vel, t.ang].into_iter().enumerate() {
                let g: Vec<f64> = t.mask.iter().map(|m| if *m { coef[k] * base } else { 0.0 }).collect();
                seeds.push((v, Matrix::from_vec(g.len(), 1, g)));
            }
        }
        let grads = tape.backward(&params, seeds);
        Ok((stats, grads.params))
    }
}

/// Estimator network together with its optimizer state.
#[derive(Debug, Clone, PartialEq)]
pub struct Estimator {
    pub f: EstimatorNet,
    pub opt: Adam,
    pub cfg: EstimatorConfig,
}

impl Estimator {
    pub fn new(obs_dim: usize, cfg: EstimatorConfig, rng: &mut impl Rng) -> Result<Self> {
        cfg.validate()?;
        let f = EstimatorNet::new(obs_dim, &cfg, rng);
        let opt = Adam::for_params(f.net.params());
        Ok(Estimator { f, opt, cfg })
    }

    /// Number of minibatches `b` the sequences are split into.
    pub fn minibatch_count(&self, data: &SequenceData) -> usize {
        let samples = data.sequences() * data.len();
        (samples / self.cfg.minibatch_size).clamp(1, data.sequences().max(1))
    }

    /// `k * b` steps of truncated backpropagation through time.
    pub fn train_epoch(&mut self, data: &SequenceData, rng: &mut impl Rng) -> Result<EstimatorMetrics> {
        let mut metrics = EstimatorMetrics::default();
        if data.sequences() == 0 || data.is_empty() {
            return Ok(metrics);
        }
        let b = self.minibatch_count(data);
        let mut order: Vec<usize> = (0..data.sequences()).collect();
        let mut total = 0.0;
        for _ in 0..self.cfg.data_reuse {
            order.shuffle(rng);
            let n = order.len();
            for i in 0..b {
                let batch = data.select(&order[i * n / b..(i + 1) * n / b]);
                let (stats, mut grads) = self.f.loss_and_grad(&batch, self.cfg.sequence_start, &self.cfg.loss_weights)?;
                let norm = crate::nn::global_norm(&grads);
                metrics.max_grad_norm = metrics.max_grad_norm.max(norm);
                if norm > self.cfg.clip_threshold {
                    clip_global_norm(&mut grads, self.cfg.clip_norm);
                    metrics.clipped += 1;
                }
                let mut params: Vec<&mut Matrix> = self.f.net.params_mut().iter_mut().collect();
                self.opt.apply(&mut params, &grads, self.cfg.lr)?;
                if metrics.steps == 0 {
                    metrics.first_loss = stats.loss;
                }
                metrics.last_loss = stats.loss;
                total += stats.loss;
                metrics.steps += 1;
            }
        }
        metrics.mean_loss = if metrics.steps > 0 { total / metrics.steps as f64 } else { 0.0 };
        Ok(metrics)
    }
}

#[cfg(test)]
mod tests;
