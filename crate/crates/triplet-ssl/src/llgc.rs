//! Label propagation with local and global consistency (LLGC).
//!
//! Build a Gaussian affinity graph W over embeddings, normalize it to
//! S = D^{-1/2} W D^{-1/2}, then iterate F <- alpha * S F + (1 - alpha) * Y
//! from F(0) = Y until the update stalls. Unlabeled rows of Y are seeded
//! with nearest-neighbor predictions rather than zeros. The fixed point
//! F* = (1 - alpha) (I - alpha S)^{-1} Y is also computed directly as an
//! independent check.
//!
//! Graph math runs in f64 regardless of the embedding precision.

use ndarray::{Array1, Array2};
use rayon::prelude::*;

use crate::embedknn::rank_select;
use crate::net::Scalar;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct LlgcConfig {
    /// Propagation strength, in [0, 1).
    pub alpha: f64,
    /// Affinity bandwidth: W_ij = exp(-sigma * ||e_i - e_j||^2).
    pub sigma: f64,
    /// Stop when the sup-norm change of F drops below this.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl LlgcConfig {
    pub fn new(alpha: f64, sigma: f64, tolerance: f64, max_iterations: usize) -> Result<Self> {
        if !(0.0..1.0).contains(&alpha) {
            return Err(Error::Argument(format!("alpha {alpha} outside [0, 1)")));
        }
        if !(sigma > 0.0) {
            return Err(Error::Argument(format!("sigma {sigma} must be positive")));
        }
        if !(tolerance > 0.0) || max_iterations == 0 {
            return Err(Error::Argument(
                "tolerance must be positive and max_iterations at least 1".into(),
            ));
        }
        Ok(LlgcConfig {
            alpha,
            sigma,
            tolerance,
            max_iterations,
        })
    }
}

impl Default for LlgcConfig {
    fn default() -> Self {
        LlgcConfig {
            alpha: 0.99,
            sigma: 1.0,
            tolerance: 1e-6,
            max_iterations: 1000,
        }
    }
}

/// One-hot label matrix over labeled-then-unlabeled rows.
#[derive(Debug, Clone)]
pub struct LabelMatrix {
    pub y: Array2<f64>,
    /// Leading rows carrying ground-truth labels.
    pub labeled_count: usize,
}

/// Gaussian affinity with zero diagonal: W_ij = exp(-sigma * ||e_i-e_j||^2)
/// for i != j.
pub fn affinity<F: Scalar>(embeddings: &Array2<F>, sigma: f64) -> Result<Array2<f64>> {
    let n = embeddings.nrows();
    if n < 2 {
        return Err(Error::Argument(format!(
            "affinity needs at least 2 rows, got {n}"
        )));
    }
    if !(sigma > 0.0) {
        return Err(Error::Argument(format!("sigma {sigma} must be positive")));
    }
    if embeddings.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite embedding".into()));
    }

    let as_f64: Array2<f64> = embeddings.mapv(|v| v.to_f64());
    let mut w = Array2::<f64>::zeros((n, n));
    ndarray::Zip::indexed(w.rows_mut()).par_for_each(|i, mut row| {
        let ei = as_f64.row(i);
        for (j, v) in row.iter_mut().enumerate() {
            if i == j {
                *v = 0.0;
            } else {
                let d2: f64 = ei
                    .iter()
                    .zip(as_f64.row(j).iter())
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                *v = (-sigma * d2).exp();
            }
        }
    });
    Ok(w)
}

/// Symmetric normalization S = D^{-1/2} W D^{-1/2} with D_i = sum_j W_ij.
/// A zero row sum means an isolated vertex, which with Gaussian affinities
/// can only come from numerical underflow; that is surfaced, not patched.
pub fn normalize_affinity(w: &Array2<f64>) -> Result<Array2<f64>> {
    let n = w.nrows();
    if w.ncols() != n {
        return Err(Error::Argument("affinity matrix must be square".into()));
    }
    let degrees: Array1<f64> = w.sum_axis(ndarray::Axis(1));
    if let Some((i, _)) = degrees.iter().enumerate().find(|(_, &d)| d <= 0.0) {
        return Err(Error::Degenerate(format!(
            "vertex {i} has zero affinity row sum"
        )));
    }
    let inv_sqrt: Vec<f64> = degrees.iter().map(|&d| 1.0 / d.sqrt()).collect();
    let mut s = w.clone();
    ndarray::Zip::indexed(s.rows_mut()).par_for_each(|i, mut row| {
        for (j, v) in row.iter_mut().enumerate() {
            *v *= inv_sqrt[i] * inv_sqrt[j];
        }
    });
    Ok(s)
}

/// Stack one-hot rows for ground-truth labels followed by one-hot rows for
/// nearest-neighbor predictions of the unlabeled examples.
pub fn seed_label_matrix(
    y_labeled: &[usize],
    knn_labels_unlabeled: &[usize],
    num_classes: usize,
) -> Result<LabelMatrix> {
    if num_classes == 0 {
        return Err(Error::Argument("num_classes must be positive".into()));
    }
    let n = y_labeled.len() + knn_labels_unlabeled.len();
    let mut y = Array2::<f64>::zeros((n, num_classes));
    for (row, &label) in y_labeled.iter().chain(knn_labels_unlabeled).enumerate() {
        if label >= num_classes {
            return Err(Error::Argument(format!(
                "label {label} out of range for {num_classes} classes"
            )));
        }
        y[[row, label]] = 1.0;
    }
    Ok(LabelMatrix {
        y,
        labeled_count: y_labeled.len(),
    })
}

/// Converged (or truncated) propagation state.
#[derive(Debug, Clone)]
pub struct PropagationResult {
    pub f: Array2<f64>,
    /// Argmax class per row (ties toward the lowest class id).
    pub labels: Vec<usize>,
    /// Row maximum of F: the confidence score backing each label.
    pub scores: Vec<f64>,
    pub iterations_used: usize,
    pub converged: bool,
}

/// Iterate F <- alpha S F + (1 - alpha) Y from F(0) = Y until the sup-norm
/// step drops below the tolerance. Hitting the iteration cap is reported,
/// not fatal.
pub fn propagate(s: &Array2<f64>, y: &LabelMatrix, config: &LlgcConfig) -> Result<PropagationResult> {
    let n = s.nrows();
    if s.ncols() != n || y.y.nrows() != n {
        return Err(Error::Argument(format!(
            "S is {}x{} but Y has {} rows",
            n,
            s.ncols(),
            y.y.nrows()
        )));
    }
    let alpha = config.alpha;
    let mut f = y.y.clone();
    let mut converged = false;
    let mut iterations = 0;

    for _ in 0..config.max_iterations {
        iterations += 1;
        let mut next = s.dot(&f);
        next.zip_mut_with(&y.y, |v, &yv| *v = alpha * *v + (1.0 - alpha) * yv);
        let delta = next
            .iter()
            .zip(f.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        f = next;
        if delta < config.tolerance {
            converged = true;
            break;
        }
    }

    let (labels, scores) = argmax_rows(&f);
    Ok(PropagationResult {
        f,
        labels,
        scores,
        iterations_used: iterations,
        converged,
    })
}

/// Fixed point of the propagation: solve (I - alpha S) F* = (1 - alpha) Y
/// by dense LU factorization. Serves as the independent check on
/// [`propagate`].
pub fn closed_form(s: &Array2<f64>, y: &Array2<f64>, alpha: f64) -> Result<Array2<f64>> {
    if !(0.0..1.0).contains(&alpha) {
        return Err(Error::Argument(format!("alpha {alpha} outside [0, 1)")));
    }
    let n = s.nrows();
    if s.ncols() != n || y.nrows() != n {
        return Err(Error::Argument("S and Y dimensions disagree".into()));
    }
    let c = y.ncols();

    let mut system = nalgebra::DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            system[(i, j)] = if i == j { 1.0 - alpha * s[[i, j]] } else { -alpha * s[[i, j]] };
        }
    }
    let rhs = nalgebra::DMatrix::<f64>::from_fn(n, c, |i, j| (1.0 - alpha) * y[[i, j]]);
    let solved = system
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Numeric("singular propagation system".into()))?;

    let mut out = Array2::<f64>::zeros((n, c));
    for i in 0..n {
        for j in 0..c {
            out[[i, j]] = solved[(i, j)];
        }
    }
    Ok(out)
}

/// Hardened labels and scores for the rows after the first `labeled_count`.
pub fn harden(f: &Array2<f64>, labeled_count: usize) -> (Vec<usize>, Vec<f64>) {
    let (labels, scores) = argmax_rows(f);
    let from = labeled_count.min(labels.len());
    (labels[from..].to_vec(), scores[from..].to_vec())
}

fn argmax_rows(f: &Array2<f64>) -> (Vec<usize>, Vec<f64>) {
    let mut labels = Vec::with_capacity(f.nrows());
    let mut scores = Vec::with_capacity(f.nrows());
    for row in f.rows() {
        let mut best = 0usize;
        for (j, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = j;
            }
        }
        labels.push(best);
        scores.push(row[best]);
    }
    (labels, scores)
}

/// Positions of the ceil(p% of basis) highest-scoring entries; ties go to
/// the earlier position.
pub fn select_top_by_score(scores: &[f64], p_percent: f64, basis: usize) -> Result<Vec<usize>> {
    rank_select(scores.iter().copied(), scores.len(), p_percent, basis, true)
}
