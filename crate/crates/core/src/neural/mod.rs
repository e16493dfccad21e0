//! A small differentiable-network core: dense and LSTM layers with hand-written
//! backward passes, ReLU and softmax, Adam, finite-difference checking and a
//! flat binary parameter format. Everything is `f64`.

mod adam;
mod dense;
mod gradcheck;
mod io;
mod lstm;

pub use adam::AdamState;
pub use dense::{dense_bwd, dense_fwd, DenseLayer};
pub use gradcheck::{grad_check, relative_error, GradCheckReport};
pub use io::{load_params, read_params, save_params, write_params};
pub use lstm::{LstmCache, LstmLayer, LstmState};

use rand::Rng;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::Dimension {
                expected,
                got: data.len(),
            });
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    /// Uniform in +-sqrt(6 / (fan_in + fan_out)) for a [fan_out x fan_in] matrix.
    pub fn glorot(rows: usize, cols: usize, rng: &mut impl Rng) -> Self {
        let limit = (6.0 / (rows + cols) as f64).sqrt();
        Tensor {
            shape: vec![rows, cols],
            data: (0..rows * cols).map(|_| rng.random_range(-limit..limit)).collect(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn fill(&mut self, value: f64) {
        self.data.iter_mut().for_each(|x| *x = value);
    }
}

/// Anything made of parameter tensors in a fixed order. Gradients are stored
/// in a value of the same type, so the two line up tensor by tensor.
pub trait Params {
    fn tensors(&self) -> Vec<&Tensor>;
    fn tensors_mut(&mut self) -> Vec<&mut Tensor>;

    fn zeros_like(&self) -> Self
    where
        Self: Clone,
    {
        let mut z = self.clone();
        z.zero();
        z
    }

    fn zero(&mut self) {
        for t in self.tensors_mut() {
            t.fill(0.0);
        }
    }

    fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    fn scale(&mut self, k: f64) {
        for t in self.tensors_mut() {
            t.data_mut().iter_mut().for_each(|x| *x *= k);
        }
    }

    fn l2_norm(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|t| t.data())
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
    }
}

/// Blend `target` toward `online`: target = tau * online + (1 - tau) * target.
pub fn soft_update<P: Params>(target: &mut P, online: &P, tau: f64) -> Result<()> {
    let src = online.tensors();
    let mut dst = target.tensors_mut();
    if src.len() != dst.len() {
        return Err(Error::Dimension {
            expected: src.len(),
            got: dst.len(),
        });
    }
    for (d, s) in dst.iter_mut().zip(src) {
        if d.shape() != s.shape() {
            return Err(Error::Dimension {
                expected: s.len(),
                got: d.len(),
            });
        }
        for (x, y) in d.data_mut().iter_mut().zip(s.data()) {
            *x = tau * y + (1.0 - tau) * *x;
        }
    }
    Ok(())
}

/// Accumulate `src` into `dst` tensor by tensor.
pub fn add_assign<P: Params>(dst: &mut P, src: &P) {
    for (d, s) in dst.tensors_mut().into_iter().zip(src.tensors()) {
        for (x, y) in d.data_mut().iter_mut().zip(s.data()) {
            *x += y;
        }
    }
}

pub fn relu(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| v.max(0.0)).collect()
}

/// Gradient through ReLU given its input; the subgradient at 0 is 0.
pub fn relu_backward(x: &[f64], dy: &[f64]) -> Vec<f64> {
    x.iter().zip(dy).map(|(&v, &d)| if v > 0.0 { d } else { 0.0 }).collect()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / sum).collect()
}

/// Gradient through softmax given its output.
pub fn softmax_backward(probs: &[f64], dprobs: &[f64]) -> Vec<f64> {
    let dot: f64 = probs.iter().zip(dprobs).map(|(p, d)| p * d).sum();
    probs.iter().zip(dprobs).map(|(p, d)| p * (d - dot)).collect()
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn argmax(x: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in x.iter().enumerate() {
        if v > x[best] {
            best = k;
        }
    }
    best
}
