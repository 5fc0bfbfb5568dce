//! Embedding extraction over datasets, pairwise Euclidean distances, 1-NN
//! prediction and distance-ranked top-p selection.

use ndarray::Array2;
use rayon::prelude::*;

use crate::data::Dataset;
use crate::net::{EmbeddingModel, Scalar};
use crate::{Error, Result};

/// Embeddings of a set of dataset rows, remembering where each row came
/// from.
#[derive(Debug, Clone)]
pub struct EmbeddingMatrix<F> {
    pub rows: Array2<F>,
    pub source_idx: Vec<usize>,
}

/// Chunk size for batched forward passes over a dataset. Fixed so that
/// embeddings never depend on scheduling.
const EMBED_CHUNK: usize = 256;

/// Run the model over the given dataset rows in fixed-size chunks
/// (chunks execute in parallel, outputs land in source order).
pub fn embed_dataset<F: Scalar>(
    model: &EmbeddingModel<F>,
    dataset: &Dataset,
    indices: &[usize],
) -> Result<EmbeddingMatrix<F>> {
    let dim = model.embedding_dim();
    let mut rows = Array2::<F>::zeros((indices.len(), dim));
    let chunks: Vec<&[usize]> = indices.chunks(EMBED_CHUNK).collect();
    let outputs: Vec<Result<Array2<F>>> = chunks
        .par_iter()
        .map(|chunk| {
            let batch = dataset.batch::<F>(chunk)?;
            model.forward(&batch)
        })
        .collect();
    let mut row = 0;
    for out in outputs {
        let out = out?;
        for r in out.outer_iter() {
            rows.row_mut(row).assign(&r);
            row += 1;
        }
    }
    Ok(EmbeddingMatrix {
        rows,
        source_idx: indices.to_vec(),
    })
}

/// Dense Euclidean distance matrix: entry (i, j) = ||a_i - b_j||.
/// Differences accumulate in f64 regardless of the embedding precision.
pub fn pairwise_dist<F: Scalar>(a: &Array2<F>, b: &Array2<F>) -> Result<Array2<f64>> {
    if a.ncols() != b.ncols() {
        return Err(Error::Argument(format!(
            "embedding dims differ: {} vs {}",
            a.ncols(),
            b.ncols()
        )));
    }
    let mut out = Array2::<f64>::zeros((a.nrows(), b.nrows()));
    ndarray::Zip::from(out.rows_mut())
        .and(a.rows())
        .par_for_each(|mut row, ai| {
            for (j, bj) in b.rows().into_iter().enumerate() {
                let mut acc = 0.0f64;
                for (x, y) in ai.iter().zip(bj.iter()) {
                    let d = x.to_f64() - y.to_f64();
                    acc += d * d;
                }
                row[j] = acc.sqrt();
            }
        });
    Ok(out)
}

/// A k-NN vote: predicted label and the distance backing it (nearest
/// distance for k = 1, mean of the k nearest for k > 1).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub label: usize,
    pub distance: f64,
}

/// Predict labels for `embed_u` rows from labeled rows `embed_l`/`y_l`.
/// Distance ties break toward the lowest labeled index; vote ties toward
/// the lowest class id.
pub fn knn_predict<F: Scalar>(
    embed_u: &Array2<F>,
    embed_l: &Array2<F>,
    y_l: &[usize],
    k: usize,
) -> Result<Vec<Prediction>> {
    if embed_l.nrows() == 0 {
        return Err(Error::Argument("empty labeled reference set".into()));
    }
    if y_l.len() != embed_l.nrows() {
        return Err(Error::Argument(format!(
            "{} labels for {} labeled rows",
            y_l.len(),
            embed_l.nrows()
        )));
    }
    if k == 0 || k > embed_l.nrows() {
        return Err(Error::Argument(format!(
            "k={k} out of range for {} labeled rows",
            embed_l.nrows()
        )));
    }

    let dist = pairwise_dist(embed_u, embed_l)?;
    let mut out = Vec::with_capacity(embed_u.nrows());
    for row in dist.outer_iter() {
        if k == 1 {
            let mut best = 0usize;
            for (j, &d) in row.iter().enumerate() {
                if d < row[best] {
                    best = j;
                }
            }
            out.push(Prediction {
                label: y_l[best],
                distance: row[best],
            });
        } else {
            let mut order: Vec<usize> = (0..row.len()).collect();
            order.sort_by(|&i, &j| {
                row[i]
                    .partial_cmp(&row[j])
                    .unwrap_or(std::cmp::Ordering::Equal)
                    .then(i.cmp(&j))
            });
            let nearest = &order[..k];
            let mut votes = std::collections::BTreeMap::new();
            for &i in nearest {
                *votes.entry(y_l[i]).or_insert(0usize) += 1;
            }
            let label = votes
                .iter()
                .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
                .map(|(&l, _)| l)
                .unwrap();
            let distance = nearest.iter().map(|&i| row[i]).sum::<f64>() / k as f64;
            out.push(Prediction { label, distance });
        }
    }
    Ok(out)
}

/// Basis for the top-p selection count.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelectionBasis {
    /// Percentage of the current unlabeled pool (the pool shrinks
    /// geometrically and never empties early).
    Current,
    /// Percentage of the initial pool size.
    Initial,
}

impl std::str::FromStr for SelectionBasis {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "current" => Ok(SelectionBasis::Current),
            "initial" => Ok(SelectionBasis::Initial),
            other => Err(Error::Config(format!(
                "unknown selection basis {other:?}; expected current or initial"
            ))),
        }
    }
}

/// Positions of the ceil(p% of basis) predictions with smallest distance,
/// capped at the pool size. Ordering key is (distance, original position),
/// making ties and the result fully deterministic.
pub fn select_top_by_distance(
    predictions: &[Prediction],
    p_percent: f64,
    pool_size_basis: usize,
) -> Result<Vec<usize>> {
    rank_select(
        predictions.iter().map(|p| p.distance),
        predictions.len(),
        p_percent,
        pool_size_basis,
        false,
    )
}

/// Shared ranking helper: ascending (distances) or descending (scores).
pub(crate) fn rank_select(
    keys: impl Iterator<Item = f64>,
    len: usize,
    p_percent: f64,
    basis: usize,
    descending: bool,
) -> Result<Vec<usize>> {
    if !(0.0..=100.0).contains(&p_percent) || p_percent <= 0.0 {
        return Err(Error::Argument(format!(
            "selection percentage {p_percent} outside (0, 100]"
        )));
    }
    if len == 0 {
        return Ok(Vec::new());
    }
    let want = ((p_percent / 100.0) * basis as f64).ceil() as usize;
    let take = want.min(len);
    let mut order: Vec<(f64, usize)> = keys.enumerate().map(|(i, k)| (k, i)).collect();
    order.sort_by(|a, b| {
        let key = a
            .0
            .partial_cmp(&b.0)
            .unwrap_or(std::cmp::Ordering::Equal);
        let key = if descending { key.reverse() } else { key };
        key.then(a.1.cmp(&b.1))
    });
    Ok(order[..take].iter().map(|&(_, i)| i).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn self_distance_is_zero() {
        let a = array![[1.5f64, -2.0]];
        let d = pairwise_dist(&a, &a).unwrap();
        assert_eq!(d[[0, 0]], 0.0);
    }

    #[test]
    fn three_four_five_triangle() {
        let a = array![[0.0f32, 0.0]];
        let b = array![[3.0f32, 4.0]];
        let d = pairwise_dist(&a, &b).unwrap();
        assert!((d[[0, 0]] - 5.0).abs() < 1e-6);
    }

    #[test]
    fn distance_matrix_matches_naive_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = Array2::from_shape_fn((13, 6), |_| rng.random::<f64>());
        let b = Array2::from_shape_fn((9, 6), |_| rng.random::<f64>());
        let d = pairwise_dist(&a, &b).unwrap();
        for i in 0..13 {
            for j in 0..9 {
                let expect: f64 = (0..6)
                    .map(|k| (a[[i, k]] - b[[j, k]]).powi(2))
                    .sum::<f64>()
                    .sqrt();
                assert!((d[[i, j]] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn symmetric_with_zero_diagonal_when_self() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = Array2::from_shape_fn((8, 4), |_| rng.random::<f64>());
        let d = pairwise_dist(&a, &a).unwrap();
        for i in 0..8 {
            assert_eq!(d[[i, i]], 0.0);
            for j in 0..8 {
                assert_eq!(d[[i, j]], d[[j, i]]);
            }
        }
    }

    #[test]
    fn triangle_inequality_spot_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = Array2::from_shape_fn((20, 3), |_| rng.random::<f64>() * 10.0);
        let d = pairwise_dist(&a, &a).unwrap();
        for i in 0..20 {
            for j in 0..20 {
                for k in 0..20 {
                    assert!(d[[i, j]] <= d[[i, k]] + d[[k, j]] + 1e-9);
                }
            }
        }
    }

    #[test]
    fn dimension_mismatch_is_argument_error() {
        let a = array![[0.0f64, 1.0]];
        let b = array![[0.0f64, 1.0, 2.0]];
        assert!(matches!(pairwise_dist(&a, &b), Err(Error::Argument(_))));
    }

    #[test]
    fn single_labeled_row_predicts_everything() {
        let u = array![[0.0f64, 0.0], [5.0, 5.0]];
        let l = array![[3.0f64, 4.0]];
        let preds = knn_predict(&u, &l, &[7], 1).unwrap();
        assert_eq!(preds[0].label, 7);
        assert!((preds[0].distance - 5.0).abs() < 1e-12);
        assert_eq!(preds[1].label, 7);
    }

    #[test]
    fn coincident_query_gets_distance_zero() {
        let l = array![[1.0f64, 2.0], [8.0, 8.0]];
        let u = array![[8.0f64, 8.0]];
        let preds = knn_predict(&u, &l, &[0, 1], 1).unwrap();
        assert_eq!(preds[0].label, 1);
        assert_eq!(preds[0].distance, 0.0);
    }

    #[test]
    fn knn_matches_exhaustive_search() {
        let l = array![
            [0.0f64, 0.0],
            [1.0, 0.0],
            [2.0, 0.0],
            [0.0, 2.0],
            [1.0, 2.0],
            [2.0, 2.0]
        ];
        let y = [0, 0, 0, 1, 1, 1];
        let u = array![[0.4f64, 0.1], [1.9, 1.7], [1.0, 1.0]];
        let preds = knn_predict(&u, &l, &y, 1).unwrap();
        for (qi, q) in u.outer_iter().enumerate() {
            let mut best = (f64::INFINITY, 0usize);
            for (li, lr) in l.outer_iter().enumerate() {
                let d = ((q[0] - lr[0]).powi(2) + (q[1] - lr[1]).powi(2)).sqrt();
                if d < best.0 {
                    best = (d, li);
                }
            }
            assert_eq!(preds[qi].label, y[best.1]);
            assert!((preds[qi].distance - best.0).abs() < 1e-12);
        }
    }

    #[test]
    fn nearest_tie_breaks_to_lowest_labeled_index() {
        let l = array![[1.0f64], [-1.0]];
        let u = array![[0.0f64]];
        let preds = knn_predict(&u, &l, &[4, 9], 1).unwrap();
        assert_eq!(preds[0].label, 4);
    }

    #[test]
    fn duplicated_reference_rows_do_not_change_k1() {
        let l = array![[0.0f64], [3.0]];
        let l_dup = array![[0.0f64], [3.0], [0.0], [3.0]];
        let u = array![[0.4f64], [2.9]];
        let a = knn_predict(&u, &l, &[0, 1], 1).unwrap();
        let b = knn_predict(&u, &l_dup, &[0, 1, 0, 1], 1).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn k3_majority_vote_with_mean_distance() {
        let l = array![[0.0f64], [0.1], [0.2], [5.0]];
        let y = [1, 1, 0, 0];
        let u = array![[0.0f64]];
        let preds = knn_predict(&u, &l, &y, 3).unwrap();
        assert_eq!(preds[0].label, 1);
        assert!((preds[0].distance - (0.0 + 0.1 + 0.2) / 3.0).abs() < 1e-12);
    }

    #[test]
    fn empty_labeled_set_is_argument_error() {
        let u = array![[0.0f64]];
        let l = Array2::<f64>::zeros((0, 1));
        assert!(matches!(
            knn_predict(&u, &l, &[], 1),
            Err(Error::Argument(_))
        ));
    }

    fn preds(distances: &[f64]) -> Vec<Prediction> {
        distances
            .iter()
            .map(|&d| Prediction { label: 0, distance: d })
            .collect()
    }

    #[test]
    fn percentage_arithmetic() {
        let p: Vec<Prediction> = (0..900).map(|i| Prediction { label: 0, distance: i as f64 }).collect();
        let sel = select_top_by_distance(&p, 10.0, 900).unwrap();
        assert_eq!(sel.len(), 90);
        assert_eq!(sel, (0..90).collect::<Vec<_>>());
    }

    #[test]
    fn equal_distances_select_positional_prefix() {
        let p = preds(&[1.0; 10]);
        let sel = select_top_by_distance(&p, 25.0, 10).unwrap();
        assert_eq!(sel, vec![0, 1, 2]); // ceil(2.5) = 3
    }

    #[test]
    fn selection_caps_at_pool_size() {
        let p = preds(&[0.3, 0.1, 0.2, 0.5, 0.4]);
        let sel = select_top_by_distance(&p, 100.0, 5).unwrap();
        assert_eq!(sel.len(), 5);
        assert_eq!(sel, vec![1, 2, 0, 4, 3]);
    }

    #[test]
    fn selection_is_a_distance_rank_prefix() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..50 {
            let n = rng.random_range(1..60);
            let p: Vec<Prediction> = (0..n)
                .map(|_| Prediction { label: 0, distance: (rng.random::<f64>() * 8.0).round() / 8.0 })
                .collect();
            let pct = rng.random_range(1..=100) as f64;
            let sel = select_top_by_distance(&p, pct, n).unwrap();
            let max_sel = sel
                .iter()
                .map(|&i| p[i].distance)
                .fold(f64::NEG_INFINITY, f64::max);
            let selected: std::collections::HashSet<usize> = sel.iter().copied().collect();
            let min_unsel = (0..n)
                .filter(|i| !selected.contains(i))
                .map(|i| p[i].distance)
                .fold(f64::INFINITY, f64::min);
            assert!(max_sel <= min_unsel + 1e-12);
        }
    }

    #[test]
    fn empty_pool_selects_nothing() {
        let sel = select_top_by_distance(&[], 50.0, 100).unwrap();
        assert!(sel.is_empty());
    }
}
