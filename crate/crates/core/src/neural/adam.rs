use super::{Params, Tensor};
use crate::error::{Error, Result};

/// Bias-corrected Adam moments for one parameter container.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl AdamState {
    pub fn new<P: Params>(params: &P, lr: f64) -> Self {
        let zeros: Vec<Tensor> = params.tensors().iter().map(|t| Tensor::zeros(t.shape())).collect();
        AdamState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// One descent step: params -= lr * m_hat / (sqrt(v_hat) + eps).
    pub fn update<P: Params>(&mut self, params: &mut P, grads: &P) -> Result<()> {
        let gs = grads.tensors();
        let mut ps = params.tensors_mut();
        if gs.len() != ps.len() || gs.len() != self.m.len() {
            return Err(Error::Dimension {
                expected: self.m.len(),
                got: gs.len(),
            });
        }
        for ((p, g), m) in ps.iter().zip(&gs).zip(&self.m) {
            if p.shape() != g.shape() || p.shape() != m.shape() {
                return Err(Error::Dimension {
                    expected: m.len(),
                    got: g.len(),
                });
            }
        }
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step as i32);
        let c2 = 1.0 - self.beta2.powi(self.step as i32);
        for (k, p) in ps.iter_mut().enumerate() {
            let g = gs[k].data();
            let m = self.m[k].data_mut();
            let v = self.v[k].data_mut();
            for (j, x) in p.data_mut().iter_mut().enumerate() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g[j];
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g[j] * g[j];
                let m_hat = m[j] / c1;
                let v_hat = v[j] / c2;
                *x -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::{relu, relu_backward, DenseLayer};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn layer(w: f64, b: f64) -> DenseLayer {
        DenseLayer::from_parts(
            Tensor::from_vec(&[1, 1], vec![w]).unwrap(),
            Tensor::from_vec(&[1], vec![b]).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = layer(0.3, -0.2);
        let before = p.clone();
        let mut adam = AdamState::new(&p, 0.01);
        adam.update(&mut p, &layer(0.0, 0.0)).unwrap();
        assert_eq!(p, before);
        assert_eq!(adam.step, 1);
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let mut p = layer(1.0, 1.0);
        let mut adam = AdamState::new(&p, 0.01);
        adam.update(&mut p, &layer(5.0, -0.02)).unwrap();
        // m_hat / sqrt(v_hat) = g / |g| exactly, up to eps
        assert!((p.w.data()[0] - (1.0 - 0.01)).abs() < 1e-9);
        assert!((p.b.data()[0] - (1.0 + 0.01)).abs() < 1e-6);
    }

    #[test]
    fn identical_states_give_identical_steps() {
        let mut a = layer(0.5, 0.5);
        let mut b = a.clone();
        let mut sa = AdamState::new(&a, 0.01);
        let mut sb = sa.clone();
        for _ in 0..3 {
            sa.update(&mut a, &layer(0.7, -1.3)).unwrap();
            sb.update(&mut b, &layer(0.7, -1.3)).unwrap();
        }
        assert_eq!(a, b);
        assert_eq!(sa, sb);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut p = layer(0.0, 0.0);
        let mut adam = AdamState::new(&p, 0.01);
        let wrong = DenseLayer::from_parts(Tensor::zeros(&[2, 1]), Tensor::zeros(&[2])).unwrap();
        assert!(adam.update(&mut p, &wrong).is_err());
        assert_eq!(adam.step, 0);
    }

    #[test]
    fn two_layer_regression_converges() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let xs: Vec<f64> = (0..50).map(|k| -1.0 + 2.0 * k as f64 / 49.0).collect();
        let ys: Vec<f64> = xs.iter().map(|x| (2.0 * x).sin() + 0.5 * x).collect();
        let mut l1 = DenseLayer::new(1, 32, &mut rng);
        let mut l2 = DenseLayer::new(32, 1, &mut rng);
        let mut a1 = AdamState::new(&l1, 0.01);
        let mut a2 = AdamState::new(&l2, 0.01);
        let eval = |l1: &DenseLayer, l2: &DenseLayer| {
            xs.iter()
                .zip(&ys)
                .map(|(x, y)| {
                    let h = relu(&l1.forward(&[*x]).unwrap());
                    (l2.forward(&h).unwrap()[0] - y).powi(2)
                })
                .sum::<f64>()
                / xs.len() as f64
        };
        let initial = eval(&l1, &l2);
        for _ in 0..2000 {
            let mut g1 = l1.zeros_like();
            let mut g2 = l2.zeros_like();
            for (x, y) in xs.iter().zip(&ys) {
                let z = l1.forward(&[*x]).unwrap();
                let h = relu(&z);
                let out = l2.forward(&h).unwrap()[0];
                let dy = [2.0 * (out - y) / xs.len() as f64];
                let mut dh = vec![0.0; 32];
                l2.backward(&h, &dy, &mut g2, Some(&mut dh));
                let dz = relu_backward(&z, &dh);
                l1.backward(&[*x], &dz, &mut g1, None);
            }
            a1.update(&mut l1, &g1).unwrap();
            a2.update(&mut l2, &g2).unwrap();
        }
        let last = eval(&l1, &l2);
        assert!(initial / last >= 100.0, "loss {initial} -> {last}");
        let _ = rng.random::<u8>();
    }
}
