use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::kernels;
use super::matrix::Matrix;
use super::tape::{Tape, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Elu,
    Identity,
}

/// Feedforward network in which every hidden layer after the first sees
/// both the previous layer's output and the raw network input.
///
/// Parameter layout, in order: layer 0 `[W_x, b]`; layer `l > 0`
/// `[W_h, W_x, b]`; output `[W_h, b]`. Weights are `fan_in x fan_out`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseSkipNet {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub output_dim: usize,
    pub activation: Activation,
    params: Vec<Matrix>,
}

struct LayerIdx {
    prev: Option<usize>,
    raw: Option<usize>,
    bias: usize,
}

impl DenseSkipNet {
    /// Zero-initialized network.
    pub fn new(input_dim: usize, hidden: &[usize], output_dim: usize, activation: Activation) -> Self {
        let mut params = Vec::new();
        for (l, &h) in hidden.iter().enumerate() {
            if l > 0 {
                params.push(Matrix::zeros(hidden[l - 1], h));
            }
            params.push(Matrix::zeros(input_dim, h));
            params.push(Matrix::zeros(1, h));
        }
        let last = hidden.last().copied().unwrap_or(input_dim);
        params.push(Matrix::zeros(last, output_dim));
        params.push(Matrix::zeros(1, output_dim));
        DenseSkipNet { input_dim, hidden: hidden.to_vec(), output_dim, activation, params }
    }

    /// Orthogonal weights with `hidden_gain` on hidden layers and
    /// `output_gain` on the output layer; zero biases.
    pub fn init_orthogonal(&mut self, rng: &mut impl Rng, hidden_gain: f64, output_gain: f64) {
        let layers = self.layer_indices();
        let last = layers.len() - 1;
        for (l, idx) in layers.iter().enumerate() {
            let gain = if l == last { output_gain } else { hidden_gain };
            let slots: Vec<usize> = idx.prev.into_iter().chain(idx.raw).collect();
            let fan_in: usize = slots.iter().map(|&p| self.params[p].rows).sum();
            let fan_out = self.params[idx.bias].cols;
            // one orthogonal block over the concatenated input, split by rows
            let joint = orthogonal(fan_in, fan_out, gain, rng);
            let mut r0 = 0;
            for p in slots {
                let rows = self.params[p].rows;
                self.params[p] = Matrix::from_vec(rows, fan_out, joint.data[r0 * fan_out..(r0 + rows) * fan_out].to_vec());
                r0 += rows;
            }
            self.params[idx.bias].data.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    pub fn params(&self) -> &[Matrix] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Matrix] {
        &mut self.params
    }

    pub fn param_refs(&self) -> Vec<&Matrix> {
        self.params.iter().collect()
    }

    pub fn set_params(&mut self, params: Vec<Matrix>) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::Dimension { what: "parameter list", expected: self.params.len(), got: params.len() });
        }
        for (old, new) in self.params.iter().zip(&params) {
            if old.shape() != new.shape() {
                return Err(Error::Dimension { what: "parameter shape", expected: old.len(), got: new.len() });
            }
        }
        self.params = params;
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(Matrix::len).sum()
    }

    /// Closed-form parameter count for a given architecture.
    pub fn count_for(input_dim: usize, hidden: &[usize], output_dim: usize) -> usize {
        let mut total = 0;
        let mut prev = 0;
        for (l, &h) in hidden.iter().enumerate() {
            if l > 0 {
                total += prev * h;
            }
            total += input_dim * h + h;
            prev = h;
        }
        let last = if hidden.is_empty() { input_dim } else { prev };
        total + last * output_dim + output_dim
    }

    fn layer_indices(&self) -> Vec<LayerIdx> {
        let mut out = Vec::new();
        let mut i = 0;
        for l in 0..self.hidden.len() {
            if l == 0 {
                out.push(LayerIdx { prev: None, raw: Some(i), bias: i + 1 });
                i += 2;
            } else {
                out.push(LayerIdx { prev: Some(i), raw: Some(i + 1), bias: i + 2 });
                i += 3;
            }
        }
        if self.hidden.is_empty() {
            out.push(LayerIdx { prev: None, raw: Some(i), bias: i + 1 });
        } else {
            out.push(LayerIdx { prev: Some(i), raw: None, bias: i + 1 });
        }
        out
    }

    fn check_input(&self, cols: usize) -> Result<()> {
        if cols != self.input_dim {
            return Err(Error::Dimension { what: "network input", expected: self.input_dim, got: cols });
        }
        Ok(())
    }

    fn activate(&self, z: Matrix) -> Matrix {
        match self.activation {
            Activation::Elu => kernels::elu(&z),
            Activation::Identity => z,
        }
    }

    /// Tape-free forward pass over a batch (one sample per row).
    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        Ok(self.forward_trace(x)?.pop().expect("output layer"))
    }

    /// Pre-activations of every hidden layer followed by the output.
    pub fn forward_trace(&self, x: &Matrix) -> Result<Vec<Matrix>> {
        self.check_input(x.cols)?;
        let layers = self.layer_indices();
        let mut trace = Vec::with_capacity(layers.len());
        let mut h: Option<Matrix> = None;
        for (l, idx) in layers.iter().enumerate() {
            let mut terms: Vec<(&Matrix, &Matrix)> = Vec::with_capacity(2);
            if let Some(p) = idx.prev {
                terms.push((h.as_ref().unwrap_or(x), &self.params[p]));
            }
            if let Some(p) = idx.raw {
                terms.push((x, &self.params[p]));
            }
            let z = kernels::affine(&terms, &self.params[idx.bias]);
            if l + 1 == layers.len() {
                trace.push(z);
            } else {
                trace.push(z.clone());
                h = Some(self.activate(z));
            }
        }
        Ok(trace)
    }

    /// Taped forward pass. Affine nodes index into `self.params()`.
    pub fn forward_tape(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        self.check_input(tape.value(x).cols)?;
        let refs = self.param_refs();
        let layers = self.layer_indices();
        let mut h = x;
        for (l, idx) in layers.iter().enumerate() {
            let mut terms = Vec::with_capacity(2);
            if let Some(p) = idx.prev {
                terms.push((h, p));
            }
            if let Some(p) = idx.raw {
                terms.push((x, p));
            }
            let z = tape.forward_affine(&refs, &terms, idx.bias);
            h = if l + 1 == layers.len() {
                z
            } else {
                match self.activation {
                    Activation::Elu => tape.elu(z),
                    Activation::Identity => z,
                }
            };
        }
        Ok(h)
    }
}

/// `rows x cols` matrix with orthonormal rows or columns (whichever is
/// shorter), scaled by `gain`.
pub fn orthogonal(rows: usize, cols: usize, gain: f64, rng: &mut impl Rng) -> Matrix {
    let (n, k) = if rows >= cols { (rows, cols) } else { (cols, rows) };
    // k orthonormal vectors of length n via modified Gram-Schmidt
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(k);
    while basis.len() < k {
        let mut v: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        for b in &basis {
            let d: f64 = v.iter().zip(b).map(|(a, c)| a * c).sum();
            v.iter_mut().zip(b).for_each(|(a, c)| *a -= d * c);
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > 1e-8 {
            v.iter_mut().for_each(|a| *a /= norm);
            basis.push(v);
        }
    }
    let mut m = Matrix::zeros(rows, cols);
    for (j, b) in basis.iter().enumerate() {
        for (i, val) in b.iter().enumerate() {
            if rows >= cols {
                m.set(i, j, gain * val);
            } else {
                m.set(j, i, gain * val);
            }
        }
    }
    m
}
