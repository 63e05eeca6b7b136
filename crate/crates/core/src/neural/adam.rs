//! Bias-corrected Adam.
//!
//! One [`AdamState`] serves one network: its moment list is aligned with the
//! network's parameter visit order, which is fixed per architecture, and the
//! step count is shared by all parameters of that network.

use super::tensor::{Param, Tensor};
use super::{shape_err, NeuralError, Scalar};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<F: Scalar> {
    pub config: AdamConfig,
    /// Completed steps; bias correction uses `t + 1` on the running step.
    pub t: u64,
    /// First/second moment per parameter, in visit order.
    pub moments: Vec<(Tensor<F>, Tensor<F>)>,
}

impl<F: Scalar> AdamState<F> {
    /// Moments start at zero with shapes cloned from the parameters.
    pub fn new(config: AdamConfig, params: &[&Param<F>]) -> Self {
        let moments = params
            .iter()
            .map(|p| {
                (
                    Tensor::zeros(p.value.shape()),
                    Tensor::zeros(p.value.shape()),
                )
            })
            .collect();
        Self {
            config,
            t: 0,
            moments,
        }
    }

    /// One update over the full parameter list (same order as construction).
    pub fn step(&mut self, params: &mut [&mut Param<F>]) -> Result<(), NeuralError> {
        adam_step(params, self)
    }
}

/// Standard bias-corrected Adam update; gradients are read from each
/// parameter's accumulator and left untouched.
pub fn adam_step<F: Scalar>(
    params: &mut [&mut Param<F>],
    state: &mut AdamState<F>,
) -> Result<(), NeuralError> {
    if params.len() != state.moments.len() {
        return Err(shape_err(
            "adam_step",
            format!("{} parameters", state.moments.len()),
            format!("{}", params.len()),
        ));
    }
    state.t += 1;
    let t = state.t as i32;
    let c = &state.config;
    let bias1 = 1.0 - c.beta1.powi(t);
    let bias2 = 1.0 - c.beta2.powi(t);
    let (b1, b2) = (F::of(c.beta1), F::of(c.beta2));
    let (one_m_b1, one_m_b2) = (F::of(1.0 - c.beta1), F::of(1.0 - c.beta2));
    let lr = F::of(c.lr);
    let eps = F::of(c.epsilon);
    let (ib1, ib2) = (F::of(1.0 / bias1), F::of(1.0 / bias2));

    for (param, (m, v)) in params.iter_mut().zip(state.moments.iter_mut()) {
        if !param.value.same_shape(&param.grad) || !param.value.same_shape(m) {
            return Err(shape_err(
                "adam_step",
                format!("{:?}", m.shape()),
                format!("{:?}", param.value.shape()),
            ));
        }
        let g = param.grad.data();
        let pv = param.value.data_mut();
        let md = m.data_mut();
        let vd = v.data_mut();
        for i in 0..pv.len() {
            let gi = g[i];
            md[i] = b1 * md[i] + one_m_b1 * gi;
            vd[i] = b2 * vd[i] + one_m_b2 * gi * gi;
            let m_hat = md[i] * ib1;
            let v_hat = vd[i] * ib2;
            pv[i] = pv[i] - lr * m_hat / (v_hat.sqrt() + eps);
        }
        param.value.debug_assert_finite("adam_step");
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_param(value: f32) -> Param<f32> {
        Param::new(Tensor::new(vec![1], vec![value]).unwrap())
    }

    #[test]
    fn hand_evaluated_single_step() {
        // Worked by hand: param 0, grad 1, lr 0.1, b1 0.5, b2 0.999, eps 1e-8.
        // m = 0.5, m_hat = 1; v = 0.001, v_hat = 1; update = -0.1/(1+eps).
        let mut p = scalar_param(0.0);
        p.grad.data_mut()[0] = 1.0;
        let cfg = AdamConfig {
            lr: 0.1,
            beta1: 0.5,
            beta2: 0.999,
            epsilon: 1e-8,
        };
        let mut state = AdamState::new(cfg, &[&p]);
        state.step(&mut [&mut p]).unwrap();
        assert!((p.value.data()[0] + 0.1).abs() < 1e-6, "{}", p.value.data()[0]);
        assert_eq!(state.t, 1);
    }

    #[test]
    fn zero_gradient_leaves_fresh_params_unchanged() {
        let mut p = scalar_param(1.25);
        let mut state = AdamState::new(AdamConfig::default(), &[&p]);
        state.step(&mut [&mut p]).unwrap();
        assert_eq!(p.value.data()[0], 1.25);
        assert_eq!(state.t, 1);
    }

    #[test]
    fn identical_runs_are_bit_identical() {
        let run = || {
            let mut p = Param::new(Tensor::<f32>::new(vec![3], vec![0.1, -0.2, 0.3]).unwrap());
            let mut state = AdamState::new(AdamConfig::default(), &[&p]);
            for step in 0..50 {
                for (i, g) in p.grad.data_mut().iter_mut().enumerate() {
                    *g = ((step * 7 + i) as f32).sin();
                }
                state.step(&mut [&mut p]).unwrap();
            }
            p.value.data().to_vec()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn moment_count_mismatch_is_shape_error() {
        let p = scalar_param(0.0);
        let mut state = AdamState::new(AdamConfig::default(), &[&p]);
        let mut a = scalar_param(0.0);
        let mut b = scalar_param(0.0);
        assert!(matches!(
            state.step(&mut [&mut a, &mut b]),
            Err(NeuralError::ShapeMismatch { .. })
        ));
    }
}
