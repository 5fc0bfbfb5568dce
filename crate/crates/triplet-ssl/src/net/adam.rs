//! Adam with bias-corrected moment estimates.

use ndarray::Array1;

use crate::{Error, Result};

use super::{EmbeddingModel, Gradients, LayerParams, Scalar};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Optimizer state: step counter plus first/second moment tensors shaped
/// like the model parameters.
#[derive(Debug, Clone)]
pub struct AdamState<F: Scalar> {
    pub config: AdamConfig,
    step: u64,
    first: Vec<Option<LayerParams<F>>>,
    second: Vec<Option<LayerParams<F>>>,
}

impl<F: Scalar> AdamState<F> {
    pub fn new(model: &EmbeddingModel<F>, config: AdamConfig) -> Self {
        let zeros = || -> Vec<Option<LayerParams<F>>> {
            model
                .params()
                .iter()
                .map(|p| {
                    p.as_ref().map(|p| LayerParams {
                        weights: ndarray::ArrayD::zeros(p.weights.raw_dim()),
                        bias: Array1::zeros(p.bias.len()),
                    })
                })
                .collect()
        };
        AdamState {
            config,
            step: 0,
            first: zeros(),
            second: zeros(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One Adam update: m and v decay toward the gradient statistics, the
/// parameters move by lr * m_hat / (sqrt(v_hat) + eps). Errors with the
/// layer index when a gradient is non-finite.
pub fn adam_step<F: Scalar>(
    model: &mut EmbeddingModel<F>,
    grads: &Gradients<F>,
    state: &mut AdamState<F>,
) -> Result<()> {
    if grads.layers.len() != model.params().len() {
        return Err(Error::Argument(
            "gradient layer count does not match the model".into(),
        ));
    }
    for (i, g) in grads.layers.iter().enumerate() {
        if let Some(g) = g {
            if g.weights.iter().any(|v| !v.is_finite()) || g.bias.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!(
                    "non-finite gradient at layer {i}"
                )));
            }
        }
    }

    state.step += 1;
    let t = state.step as i32;
    let cfg = state.config;
    let b1 = F::from_f64(cfg.beta1);
    let b2 = F::from_f64(cfg.beta2);
    let one = F::one();
    let lr = F::from_f64(cfg.learning_rate);
    let eps = F::from_f64(cfg.epsilon);
    let bc1 = F::from_f64(1.0 - cfg.beta1.powi(t));
    let bc2 = F::from_f64(1.0 - cfg.beta2.powi(t));

    for (i, layer) in model.params_mut().iter_mut().enumerate() {
        let (Some(p), Some(g)) = (layer.as_mut(), grads.layers[i].as_ref()) else {
            continue;
        };
        let m = state.first[i].as_mut().expect("moment slot");
        let v = state.second[i].as_mut().expect("moment slot");

        let update = |param: &mut F, grad: F, m: &mut F, v: &mut F| {
            *m = b1 * *m + (one - b1) * grad;
            *v = b2 * *v + (one - b2) * grad * grad;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *param = *param - lr * m_hat / (v_hat.sqrt() + eps);
        };

        for ((param, &grad), (m, v)) in p
            .weights
            .iter_mut()
            .zip(g.weights.iter())
            .zip(m.weights.iter_mut().zip(v.weights.iter_mut()))
        {
            update(param, grad, m, v);
        }
        for ((param, &grad), (m, v)) in p
            .bias
            .iter_mut()
            .zip(g.bias.iter())
            .zip(m.bias.iter_mut().zip(v.bias.iter_mut()))
        {
            update(param, grad, m, v);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{init_model, LayerSpec, Shape};
    use ndarray::ArrayD;

    fn scalar_model(value: f64) -> EmbeddingModel<f64> {
        let mut model = init_model::<f64>(
            Shape::Flat { dim: 1 },
            &[LayerSpec::Dense { output_dim: 1 }],
            0,
        )
        .unwrap();
        model.params_mut()[0].as_mut().unwrap().weights.fill(value);
        model
    }

    fn unit_gradient(model: &EmbeddingModel<f64>, g: f64) -> Gradients<f64> {
        Gradients {
            layers: model
                .params()
                .iter()
                .map(|p| {
                    p.as_ref().map(|p| LayerParams {
                        weights: ArrayD::from_elem(p.weights.raw_dim(), g),
                        bias: Array1::zeros(p.bias.len()),
                    })
                })
                .collect(),
        }
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // With g=1 the bias-corrected first step is lr * g / (|g| + eps).
        let mut model = scalar_model(2.0);
        let mut state = AdamState::new(&model, AdamConfig::default());
        let grads = unit_gradient(&model, 1.0);
        adam_step(&mut model, &grads, &mut state).unwrap();
        let w = model.params()[0].as_ref().unwrap().weights[[0, 0]];
        let expected = 2.0 - 1e-3 * 1.0 / (1.0 + 1e-8);
        assert!((w - expected).abs() < 1e-12, "w={w}, expected {expected}");
        assert_eq!(state.step_count(), 1);
    }

    #[test]
    fn zero_gradient_on_fresh_state_keeps_parameters() {
        let mut model = scalar_model(1.5);
        let mut state = AdamState::new(&model, AdamConfig::default());
        let grads = unit_gradient(&model, 0.0);
        adam_step(&mut model, &grads, &mut state).unwrap();
        assert_eq!(model.params()[0].as_ref().unwrap().weights[[0, 0]], 1.5);
    }

    #[test]
    fn identical_inputs_update_identically() {
        let mut a = scalar_model(0.7);
        let mut b = scalar_model(0.7);
        let mut sa = AdamState::new(&a, AdamConfig::default());
        let mut sb = AdamState::new(&b, AdamConfig::default());
        for step in 0..5 {
            let g = unit_gradient(&a, 0.3 - step as f64 * 0.1);
            adam_step(&mut a, &g, &mut sa).unwrap();
            adam_step(&mut b, &g, &mut sb).unwrap();
        }
        assert_eq!(
            a.params()[0].as_ref().unwrap().weights,
            b.params()[0].as_ref().unwrap().weights
        );
    }

    #[test]
    fn non_finite_gradient_reports_layer() {
        let mut model = scalar_model(1.0);
        let mut state = AdamState::new(&model, AdamConfig::default());
        let grads = unit_gradient(&model, f64::NAN);
        match adam_step(&mut model, &grads, &mut state) {
            Err(Error::Numeric(msg)) => assert!(msg.contains("layer 0"), "{msg}"),
            other => panic!("expected numeric error, got {other:?}"),
        }
    }
}
