use rand::Rng;

use super::{Params, Tensor};
use crate::error::{Error, Result};

/// y = W x + b with W stored [out x in].
#[derive(Clone, Debug, PartialEq)]
pub struct DenseLayer {
    pub w: Tensor,
    pub b: Tensor,
}

impl DenseLayer {
    pub fn new(input: usize, output: usize, rng: &mut impl Rng) -> Self {
        DenseLayer {
            w: Tensor::glorot(output, input, rng),
            b: Tensor::zeros(&[output]),
        }
    }

    pub fn from_parts(w: Tensor, b: Tensor) -> Result<Self> {
        if w.shape().len() != 2 || b.shape() != [w.shape()[0]] {
            return Err(Error::Dimension {
                expected: w.shape().first().copied().unwrap_or(0),
                got: b.len(),
            });
        }
        Ok(DenseLayer { w, b })
    }

    pub fn input_size(&self) -> usize {
        self.w.shape()[1]
    }

    pub fn output_size(&self) -> usize {
        self.w.shape()[0]
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_size() {
            return Err(Error::Dimension {
                expected: self.input_size(),
                got: x.len(),
            });
        }
        let mut y = vec![0.0; self.output_size()];
        self.forward_into(x, &mut y);
        Ok(y)
    }

    /// Forward pass without shape checks, for hot loops.
    pub fn forward_into(&self, x: &[f64], y: &mut [f64]) {
        let n = self.input_size();
        for (o, (yo, bo)) in y.iter_mut().zip(self.b.data()).enumerate() {
            let row = &self.w.data()[o * n..(o + 1) * n];
            *yo = bo + row.iter().zip(x).map(|(w, x)| w * x).sum::<f64>();
        }
    }

    /// Accumulate parameter gradients into `grad` and, when asked, write the
    /// input gradient into `dx`.
    pub fn backward(&self, x: &[f64], dy: &[f64], grad: &mut DenseLayer, dx: Option<&mut [f64]>) {
        let n = self.input_size();
        {
            let gw = grad.w.data_mut();
            for (o, &d) in dy.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                let row = &mut gw[o * n..(o + 1) * n];
                for (g, &xi) in row.iter_mut().zip(x) {
                    *g += d * xi;
                }
            }
        }
        for (g, &d) in grad.b.data_mut().iter_mut().zip(dy) {
            *g += d;
        }
        if let Some(dx) = dx {
            dx.iter_mut().for_each(|v| *v = 0.0);
            for (o, &d) in dy.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                let row = &self.w.data()[o * n..(o + 1) * n];
                for (g, &w) in dx.iter_mut().zip(row) {
                    *g += d * w;
                }
            }
        }
    }
}

impl Params for DenseLayer {
    fn tensors(&self) -> Vec<&Tensor> {
        vec![&self.w, &self.b]
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.w, &mut self.b]
    }
}

pub fn dense_fwd(layer: &DenseLayer, x: &[f64]) -> Result<Vec<f64>> {
    layer.forward(x)
}

/// Gradients of a dense layer for one input: (dx, dW, db).
pub fn dense_bwd(layer: &DenseLayer, x: &[f64], dy: &[f64]) -> Result<(Vec<f64>, Tensor, Tensor)> {
    if x.len() != layer.input_size() || dy.len() != layer.output_size() {
        return Err(Error::Dimension {
            expected: layer.input_size() + layer.output_size(),
            got: x.len() + dy.len(),
        });
    }
    let mut grad = layer.zeros_like();
    let mut dx = vec![0.0; x.len()];
    layer.backward(x, dy, &mut grad, Some(&mut dx));
    Ok((dx, grad.w, grad.b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::grad_check;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_and_constant_layers() {
        let eye = DenseLayer::from_parts(
            Tensor::from_vec(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap(),
            Tensor::zeros(&[2]),
        )
        .unwrap();
        assert_eq!(eye.forward(&[3.0, -4.0]).unwrap(), vec![3.0, -4.0]);
        let constant =
            DenseLayer::from_parts(Tensor::zeros(&[2, 3]), Tensor::from_vec(&[2], vec![7.0, -1.0]).unwrap()).unwrap();
        assert_eq!(constant.forward(&[1.0, 2.0, 3.0]).unwrap(), vec![7.0, -1.0]);
        assert!(matches!(constant.forward(&[1.0]), Err(Error::Dimension { .. })));
    }

    #[test]
    fn gradients_match_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut layer = DenseLayer::new(5, 4, &mut rng);
        let x: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
        let dy: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let loss = |l: &DenseLayer| l.forward(&x).unwrap().iter().zip(&dy).map(|(y, d)| y * d).sum::<f64>();
        let (dx, dw, db) = dense_bwd(&layer, &x, &dy).unwrap();
        let analytic = DenseLayer::from_parts(dw, db).unwrap();
        let report = grad_check(&mut layer, &analytic, loss, 1e-5);
        assert!(report.max_relative_error < 1e-6, "{report:?}");

        for k in 0..5 {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[k] += 1e-5;
            xm[k] -= 1e-5;
            let f = |x: &[f64]| {
                layer
                    .forward(x)
                    .unwrap()
                    .iter()
                    .zip(&dy)
                    .map(|(y, d)| y * d)
                    .sum::<f64>()
            };
            let num = (f(&xp) - f(&xm)) / 2e-5;
            assert!(crate::neural::relative_error(dx[k], num) < 1e-6);
        }
    }
}
