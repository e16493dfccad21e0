use super::Params;

/// Denominator floor so that gradients that are both near zero compare by
/// absolute difference.
const FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR)
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// (tensor index, element index) of the worst entry.
    pub worst: (usize, usize),
    pub checked: usize,
}

/// Compare `analytic` against central differences of `loss` over every
/// parameter of `params`. `params` is restored before returning.
pub fn grad_check<P: Params>(params: &mut P, analytic: &P, loss: impl Fn(&P) -> f64, h: f64) -> GradCheckReport {
    let grads: Vec<Vec<f64>> = analytic.tensors().iter().map(|t| t.data().to_vec()).collect();
    let sizes: Vec<usize> = params.tensors().iter().map(|t| t.len()).collect();
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst: (0, 0),
        checked: 0,
    };
    for (k, &n) in sizes.iter().enumerate() {
        for j in 0..n {
            let orig = params.tensors()[k].data()[j];
            params.tensors_mut()[k].data_mut()[j] = orig + h;
            let up = loss(params);
            params.tensors_mut()[k].data_mut()[j] = orig - h;
            let down = loss(params);
            params.tensors_mut()[k].data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * h);
            let err = relative_error(grads[k][j], numeric);
            if err > report.max_relative_error || err.is_nan() {
                report.max_relative_error = err;
                report.worst = (k, j);
            }
            report.checked += 1;
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::{DenseLayer, Tensor};

    #[test]
    fn wrong_backward_is_caught() {
        let mut layer = DenseLayer::from_parts(
            Tensor::from_vec(&[2, 2], vec![0.3, -0.7, 1.2, 0.4]).unwrap(),
            Tensor::from_vec(&[2], vec![0.1, 0.2]).unwrap(),
        )
        .unwrap();
        let x = [0.5, -1.5];
        let loss = |l: &DenseLayer| l.forward(&x).unwrap().iter().map(|y| y * y).sum::<f64>();
        let y = layer.forward(&x).unwrap();
        let dy: Vec<f64> = y.iter().map(|v| 2.0 * v).collect();
        let mut grad = layer.zeros_like();
        layer.backward(&x, &dy, &mut grad, None);
        assert!(grad_check(&mut layer, &grad, loss, 1e-5).max_relative_error < 1e-6);

        // drop the factor of two, as a buggy backward might
        grad.scale(0.5);
        let report = grad_check(&mut layer, &grad, loss, 1e-5);
        assert!(report.max_relative_error > 1e-2);
        assert_eq!(report.checked, 6);
    }
}
