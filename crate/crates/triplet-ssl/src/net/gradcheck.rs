//! Finite-difference gradient verification.
//!
//! Compares analytic parameter gradients against central differences of an
//! arbitrary scalar loss over the embeddings. Runs in f64; the
//! perturbation loop walks every parameter, so keep models small.

use ndarray::{Array2, ArrayD};

use crate::Result;

use super::{EmbeddingModel, Scalar};

#[derive(Debug, Clone, Copy)]
pub struct GradCheckReport {
    pub max_abs_error: f64,
    pub max_rel_error: f64,
    pub params_checked: usize,
}

/// Relative error with an absolute floor, so that near-zero gradient pairs
/// (dead relu paths) compare on an absolute scale instead of blowing up.
fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Check the analytic gradient of `loss` composed with the model forward
/// pass. `loss` returns the scalar value and its gradient with respect to
/// the embeddings; only the value is used on perturbed evaluations.
pub fn grad_check<L>(
    model: &EmbeddingModel<f64>,
    batch: &ArrayD<f64>,
    loss: &L,
    step: f64,
    rel_floor: f64,
) -> Result<GradCheckReport>
where
    L: Fn(&Array2<f64>) -> (f64, Array2<f64>),
{
    let (embeddings, cache) = model.forward_cached(batch)?;
    let (_, grad_embed) = loss(&embeddings);
    let analytic = model.backward_cached(&cache, &grad_embed)?;

    let mut work = model.clone();
    let mut max_abs: f64 = 0.0;
    let mut max_rel: f64 = 0.0;
    let mut checked = 0usize;

    let layer_count = model.params().len();
    for li in 0..layer_count {
        if model.params()[li].is_none() {
            continue;
        }
        let weight_len = model.params()[li].as_ref().unwrap().weights.len();
        let bias_len = model.params()[li].as_ref().unwrap().bias.len();

        for pi in 0..weight_len + bias_len {
            let read = |m: &EmbeddingModel<f64>| -> f64 {
                let p = m.params()[li].as_ref().unwrap();
                if pi < weight_len {
                    p.weights.as_slice().expect("standard layout")[pi]
                } else {
                    p.bias[pi - weight_len]
                }
            };
            let write = |m: &mut EmbeddingModel<f64>, v: f64| {
                let p = m.params_mut()[li].as_mut().unwrap();
                if pi < weight_len {
                    p.weights.as_slice_mut().expect("standard layout")[pi] = v;
                } else {
                    p.bias[pi - weight_len] = v;
                }
            };

            let original = read(&work);
            write(&mut work, original + step);
            let (plus, _) = loss(&work.forward(batch)?);
            write(&mut work, original - step);
            let (minus, _) = loss(&work.forward(batch)?);
            write(&mut work, original);

            let numeric = (plus - minus) / (2.0 * step);
            let a = {
                let g = analytic.layers[li].as_ref().unwrap();
                if pi < weight_len {
                    g.weights.as_slice().expect("standard layout")[pi]
                } else {
                    g.bias[pi - weight_len]
                }
            };
            max_abs = max_abs.max((a - numeric).abs());
            max_rel = max_rel.max(relative_error(a, numeric, rel_floor));
            checked += 1;
        }
    }

    Ok(GradCheckReport {
        max_abs_error: max_abs,
        max_rel_error: max_rel,
        params_checked: checked,
    })
}

/// Central finite differences of a scalar function over a flat vector.
/// Shared oracle for loss-level gradient tests.
pub fn finite_difference<F2>(f: F2, point: &[f64], step: f64) -> Vec<f64>
where
    F2: Fn(&[f64]) -> f64,
{
    let mut grads = Vec::with_capacity(point.len());
    let mut x = point.to_vec();
    for i in 0..point.len() {
        x[i] = point[i] + step;
        let plus = f(&x);
        x[i] = point[i] - step;
        let minus = f(&x);
        x[i] = point[i];
        grads.push((plus - minus) / (2.0 * step));
    }
    grads
}

/// Scalar-generic sum-of-squares loss used in tests: L = sum(e^2) / n.
pub fn mean_square_loss<F: Scalar>(embeddings: &Array2<F>) -> (f64, Array2<F>) {
    let n = embeddings.nrows().max(1);
    let value = embeddings.iter().map(|v| v.to_f64() * v.to_f64()).sum::<f64>() / n as f64;
    let scale = F::from_f64(2.0 / n as f64);
    (value, embeddings.mapv(|v| v * scale))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{init_model, LayerSpec, Shape};
    use ndarray::IxDyn;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn finite_difference_matches_polynomial() {
        let f = |v: &[f64]| v[0] * v[0] * v[1] + 3.0 * v[1];
        let g = finite_difference(f, &[2.0, 5.0], 1e-6);
        assert!((g[0] - 20.0).abs() < 1e-6);
        assert!((g[1] - 7.0).abs() < 1e-6);
    }

    #[test]
    fn dense_chain_gradients_match_finite_differences() {
        let model = init_model::<f64>(
            Shape::Flat { dim: 5 },
            &[
                LayerSpec::Dense { output_dim: 7 },
                LayerSpec::Relu,
                LayerSpec::Dense { output_dim: 3 },
            ],
            123,
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let batch = ArrayD::from_shape_fn(IxDyn(&[4, 5]), |_| rng.random::<f64>() - 0.5);
        let report = grad_check(&model, &batch, &mean_square_loss::<f64>, 1e-5, 1e-6).unwrap();
        assert!(report.params_checked > 0);
        assert!(
            report.max_rel_error < 1e-6,
            "max rel error {}",
            report.max_rel_error
        );
    }

    #[test]
    fn conv_chain_gradients_match_finite_differences() {
        let model = init_model::<f64>(
            Shape::Image { h: 6, w: 6, c: 1 },
            &[
                LayerSpec::Conv { feature_maps: 3, kernel_size: 3, stride: 1, padding: 1 },
                LayerSpec::Relu,
                LayerSpec::MaxPool { pool_size: 2, stride: 2 },
                LayerSpec::Conv { feature_maps: 2, kernel_size: 2, stride: 1, padding: 0 },
                LayerSpec::Flatten,
                LayerSpec::Dense { output_dim: 4 },
            ],
            77,
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let batch = ArrayD::from_shape_fn(IxDyn(&[3, 6, 6, 1]), |_| rng.random::<f64>());
        let report = grad_check(&model, &batch, &mean_square_loss::<f64>, 1e-5, 1e-6).unwrap();
        assert!(
            report.max_rel_error < 1e-5,
            "max rel error {}",
            report.max_rel_error
        );
    }

    #[test]
    fn avgpool_chain_gradients_match() {
        let model = init_model::<f64>(
            Shape::Image { h: 4, w: 4, c: 2 },
            &[
                LayerSpec::Conv { feature_maps: 2, kernel_size: 1, stride: 1, padding: 0 },
                LayerSpec::AvgPool { pool_size: 2, stride: 2 },
                LayerSpec::Flatten,
            ],
            3,
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let batch = ArrayD::from_shape_fn(IxDyn(&[2, 4, 4, 2]), |_| rng.random::<f64>());
        let report = grad_check(&model, &batch, &mean_square_loss::<f64>, 1e-5, 1e-6).unwrap();
        assert!(report.max_rel_error < 1e-6, "{}", report.max_rel_error);
    }
}
