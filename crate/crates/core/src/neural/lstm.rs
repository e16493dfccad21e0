use rand::Rng;

use super::{sigmoid, Params, Tensor};
use crate::error::{Error, Result};

/// One LSTM layer. Gate blocks are stacked in the order input, forget, cell
/// candidate, output, so `w_x` is [4h x in], `w_h` is [4h x h] and `b` is [4h].
#[derive(Clone, Debug, PartialEq)]
pub struct LstmLayer {
    pub w_x: Tensor,
    pub w_h: Tensor,
    pub b: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LstmState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl LstmState {
    pub fn zeros(hidden: usize) -> Self {
        LstmState {
            h: vec![0.0; hidden],
            c: vec![0.0; hidden],
        }
    }
}

#[derive(Clone, Debug)]
struct StepCache {
    x: Vec<f64>,
    h_prev: Vec<f64>,
    c_prev: Vec<f64>,
    // activated gates, 4h wide
    gates: Vec<f64>,
    tanh_c: Vec<f64>,
}

/// Everything the backward pass needs from a forward pass.
#[derive(Clone, Debug)]
pub struct LstmCache {
    steps: Vec<StepCache>,
}

impl LstmCache {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

impl LstmLayer {
    pub fn new(input: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        LstmLayer {
            w_x: Tensor::glorot(4 * hidden, input, rng),
            w_h: Tensor::glorot(4 * hidden, hidden, rng),
            b: Tensor::zeros(&[4 * hidden]),
        }
    }

    pub fn zeros(input: usize, hidden: usize) -> Self {
        LstmLayer {
            w_x: Tensor::zeros(&[4 * hidden, input]),
            w_h: Tensor::zeros(&[4 * hidden, hidden]),
            b: Tensor::zeros(&[4 * hidden]),
        }
    }

    pub fn from_parts(w_x: Tensor, w_h: Tensor, b: Tensor) -> Result<Self> {
        let rows = b.len();
        let hidden = rows / 4;
        let ok = rows.is_multiple_of(4)
            && b.shape().len() == 1
            && w_x.shape().len() == 2
            && w_x.shape()[0] == rows
            && w_h.shape() == [rows, hidden];
        if !ok {
            return Err(Error::Dimension {
                expected: rows,
                got: w_h.shape().first().copied().unwrap_or(0),
            });
        }
        Ok(LstmLayer { w_x, w_h, b })
    }

    pub fn input_size(&self) -> usize {
        self.w_x.shape()[1]
    }

    pub fn hidden_size(&self) -> usize {
        self.w_h.shape()[1]
    }

    /// Run the recurrence over `inputs` from `init`. Returns the hidden output
    /// of every step, the final state and the cache for `backward`.
    pub fn forward<X: AsRef<[f64]>>(
        &self,
        inputs: &[X],
        init: &LstmState,
    ) -> Result<(Vec<Vec<f64>>, LstmState, LstmCache)> {
        let hidden = self.hidden_size();
        let n_in = self.input_size();
        if init.h.len() != hidden || init.c.len() != hidden {
            return Err(Error::Dimension {
                expected: hidden,
                got: init.h.len().max(init.c.len()),
            });
        }
        let mut outputs = Vec::with_capacity(inputs.len());
        let mut steps = Vec::with_capacity(inputs.len());
        let mut h = init.h.clone();
        let mut c = init.c.clone();
        for x in inputs {
            let x = x.as_ref();
            if x.len() != n_in {
                return Err(Error::Dimension {
                    expected: n_in,
                    got: x.len(),
                });
            }
            let mut gates = self.b.data().to_vec();
            mat_vec_add(self.w_x.data(), n_in, x, &mut gates);
            mat_vec_add(self.w_h.data(), hidden, &h, &mut gates);
            for (k, z) in gates.iter_mut().enumerate() {
                *z = if (2 * hidden..3 * hidden).contains(&k) {
                    z.tanh()
                } else {
                    sigmoid(*z)
                };
            }
            let mut c_new = vec![0.0; hidden];
            let mut tanh_c = vec![0.0; hidden];
            let mut h_new = vec![0.0; hidden];
            for k in 0..hidden {
                let (i, f, g, o) = (
                    gates[k],
                    gates[hidden + k],
                    gates[2 * hidden + k],
                    gates[3 * hidden + k],
                );
                c_new[k] = f * c[k] + i * g;
                tanh_c[k] = c_new[k].tanh();
                h_new[k] = o * tanh_c[k];
            }
            steps.push(StepCache {
                x: x.to_vec(),
                h_prev: h,
                c_prev: c,
                gates,
                tanh_c,
            });
            outputs.push(h_new.clone());
            h = h_new;
            c = c_new;
        }
        Ok((outputs, LstmState { h, c }, LstmCache { steps }))
    }

    /// Backpropagation through time. `d_outputs[t]` is the loss gradient with
    /// respect to the hidden output of step t (pass zeros where unused).
    /// Parameter gradients are accumulated into `grad`; the input gradients
    /// and the gradient with respect to the initial state are returned.
    pub fn backward<D: AsRef<[f64]>>(
        &self,
        cache: &LstmCache,
        d_outputs: &[D],
        grad: &mut LstmLayer,
    ) -> Result<(Vec<Vec<f64>>, LstmState)> {
        let hidden = self.hidden_size();
        let n_in = self.input_size();
        if d_outputs.len() != cache.steps.len() {
            return Err(Error::Dimension {
                expected: cache.steps.len(),
                got: d_outputs.len(),
            });
        }
        let mut dh_next = vec![0.0; hidden];
        let mut dc_next = vec![0.0; hidden];
        let mut dxs = vec![Vec::new(); cache.steps.len()];
        let mut dz = vec![0.0; 4 * hidden];
        for (t, step) in cache.steps.iter().enumerate().rev() {
            let dy = d_outputs[t].as_ref();
            if dy.len() != hidden {
                return Err(Error::Dimension {
                    expected: hidden,
                    got: dy.len(),
                });
            }
            let g = &step.gates;
            for k in 0..hidden {
                let (i, f, cand, o) = (g[k], g[hidden + k], g[2 * hidden + k], g[3 * hidden + k]);
                let dh = dy[k] + dh_next[k];
                let tc = step.tanh_c[k];
                let dc = dc_next[k] + dh * o * (1.0 - tc * tc);
                dz[k] = dc * cand * i * (1.0 - i);
                dz[hidden + k] = dc * step.c_prev[k] * f * (1.0 - f);
                dz[2 * hidden + k] = dc * i * (1.0 - cand * cand);
                dz[3 * hidden + k] = dh * tc * o * (1.0 - o);
                dc_next[k] = dc * f;
            }
            outer_add(grad.w_x.data_mut(), n_in, &dz, &step.x);
            outer_add(grad.w_h.data_mut(), hidden, &dz, &step.h_prev);
            for (gb, d) in grad.b.data_mut().iter_mut().zip(&dz) {
                *gb += d;
            }
            let mut dx = vec![0.0; n_in];
            mat_t_vec(self.w_x.data(), n_in, &dz, &mut dx);
            dxs[t] = dx;
            dh_next.iter_mut().for_each(|v| *v = 0.0);
            mat_t_vec(self.w_h.data(), hidden, &dz, &mut dh_next);
        }
        Ok((dxs, LstmState { h: dh_next, c: dc_next }))
    }
}

impl Params for LstmLayer {
    fn tensors(&self) -> Vec<&Tensor> {
        vec![&self.w_x, &self.w_h, &self.b]
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.w_x, &mut self.w_h, &mut self.b]
    }
}

// y += M x for row-major M with `cols` columns.
fn mat_vec_add(m: &[f64], cols: usize, x: &[f64], y: &mut [f64]) {
    for (r, yr) in y.iter_mut().enumerate() {
        *yr += m[r * cols..(r + 1) * cols]
            .iter()
            .zip(x)
            .map(|(a, b)| a * b)
            .sum::<f64>();
    }
}

// y += M^T d
fn mat_t_vec(m: &[f64], cols: usize, d: &[f64], y: &mut [f64]) {
    for (r, &dr) in d.iter().enumerate() {
        if dr == 0.0 {
            continue;
        }
        for (yc, a) in y.iter_mut().zip(&m[r * cols..(r + 1) * cols]) {
            *yc += dr * a;
        }
    }
}

// M += d x^T
fn outer_add(m: &mut [f64], cols: usize, d: &[f64], x: &[f64]) {
    for (r, &dr) in d.iter().enumerate() {
        if dr == 0.0 {
            continue;
        }
        for (mc, xc) in m[r * cols..(r + 1) * cols].iter_mut().zip(x) {
            *mc += dr * xc;
        }
    }
}
