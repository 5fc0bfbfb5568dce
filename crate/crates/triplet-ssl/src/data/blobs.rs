//! Isotropic Gaussian cluster generator for desk-scale experiments.

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result};

use super::{Dataset, Features};

/// Generate `n_per_class` points around each center with isotropic Gaussian
/// noise of the given standard deviation. Labels are the center index.
/// Deterministic in `seed`.
pub fn make_blobs(
    n_per_class: usize,
    centers: &[Vec<f64>],
    stddev: f64,
    seed: u64,
) -> Result<Dataset> {
    if n_per_class == 0 {
        return Err(Error::Argument("n_per_class must be positive".into()));
    }
    if centers.len() < 2 {
        return Err(Error::Argument("need at least 2 centers".into()));
    }
    if stddev < 0.0 {
        return Err(Error::Argument("stddev must be non-negative".into()));
    }
    let dim = centers[0].len();
    if dim == 0 || centers.iter().any(|c| c.len() != dim) {
        return Err(Error::Argument(
            "centers must share one non-zero dimension".into(),
        ));
    }

    let c = centers.len();
    let n = n_per_class * c;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut feats = Array2::<f32>::zeros((n, dim));
    let mut labels = Vec::with_capacity(n);
    for (cls, center) in centers.iter().enumerate() {
        for i in 0..n_per_class {
            let row = cls * n_per_class + i;
            for (j, &cj) in center.iter().enumerate() {
                feats[[row, j]] = (cj + stddev * standard_normal(&mut rng)) as f32;
            }
            labels.push(cls);
        }
    }

    Dataset::new(Features::Flat(feats), Some(labels), c)
}

/// Box-Muller draw; two uniforms per normal keeps the stream layout simple.
fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    use rand::Rng;
    let u1: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}
