use std::collections::BTreeMap;

use ndarray::ArrayD;

use super::{HasParams, Param};
use crate::error::{Error, Result};

/// Adaptive moment estimation with the standard decay/epsilon defaults.
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    moments: BTreeMap<String, (ArrayD<f64>, ArrayD<f64>)>,
}

impl Adam {
    pub fn new(learning_rate: f64) -> Self {
        Adam {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    /// One optimizer step over every parameter of `model`. Gradients must be
    /// populated; a non-finite gradient aborts before any update, naming the
    /// offending parameter.
    pub fn step(&mut self, model: &mut dyn HasParams) -> Result<()> {
        if let Some(path) = model.non_finite_grad() {
            return Err(Error::NonFiniteGradient(path));
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.learning_rate, self.eps);
        let moments = &mut self.moments;
        model.visit_params(&mut |path, param: &mut Param| {
            let entry = moments.entry(path.to_string()).or_insert_with(|| {
                (
                    ArrayD::zeros(param.value.raw_dim()),
                    ArrayD::zeros(param.value.raw_dim()),
                )
            });
            let (m, v) = entry;
            azip_update(m, v, param, b1, b2, bc1, bc2, lr, eps);
        });
        Ok(())
    }
}

#[allow(clippy::too_many_arguments)]
fn azip_update(
    m: &mut ArrayD<f64>,
    v: &mut ArrayD<f64>,
    param: &mut Param,
    b1: f64,
    b2: f64,
    bc1: f64,
    bc2: f64,
    lr: f64,
    eps: f64,
) {
    let g = &param.grad;
    ndarray::Zip::from(&mut param.value)
        .and(m)
        .and(v)
        .and(g)
        .for_each(|p, m, v, &g| {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        });
}

/// Single-parameter-collection convenience wrapper over [`Adam::step`].
pub fn adam_step(model: &mut dyn HasParams, state: &mut Adam) -> Result<()> {
    state.step(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{ArrayD, IxDyn};

    struct Scalar {
        p: Param,
    }

    impl HasParams for Scalar {
        fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut Param)) {
            f("p", &mut self.p);
        }
    }

    fn scalar(v: f64) -> Scalar {
        Scalar {
            p: Param::new(ArrayD::from_elem(IxDyn(&[1]), v)),
        }
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut s = scalar(3.0);
        let mut adam = Adam::new(0.001);
        for _ in 0..5 {
            s.p.zero_grad();
            adam.step(&mut s).unwrap();
        }
        assert_eq!(s.p.value[[0]], 3.0);
    }

    #[test]
    fn first_step_with_unit_gradient_moves_by_learning_rate() {
        let mut s = scalar(0.0);
        let mut adam = Adam::new(0.001);
        s.p.grad.fill(1.0);
        adam.step(&mut s).unwrap();
        // Bias-corrected m_hat = v_hat = 1, so the step is lr / (1 + eps).
        let expected = -0.001 / (1.0 + 1e-8);
        assert!((s.p.value[[0]] - expected).abs() < 1e-12);
    }

    #[test]
    fn nan_gradient_is_rejected_with_parameter_name() {
        let mut s = scalar(0.0);
        let mut adam = Adam::new(0.001);
        s.p.grad.fill(f64::NAN);
        let err = adam.step(&mut s).unwrap_err();
        assert!(err.to_string().contains('p'), "{err}");
        assert_eq!(s.p.value[[0]], 0.0);
    }
}
