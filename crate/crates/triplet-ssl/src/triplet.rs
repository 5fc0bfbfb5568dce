//! Batch-all triplet mining and the triplet margin loss.
//!
//! A triplet (a, p, n) pairs an anchor with a positive of the same class
//! and a negative of a different class. The per-triplet loss is
//! max(d(a,p) - d(a,n) + m, 0) with plain Euclidean d; the batch loss is
//! the mean over all mined triplets. Triplets whose hinge is inactive
//! contribute nothing to the gradient.

use ndarray::{Array2, ArrayView1};

use crate::{Error, Result};

use crate::net::Scalar;

/// Indices into a mini-batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Triplet {
    pub anchor: usize,
    pub positive: usize,
    pub negative: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct TripletLossConfig {
    pub margin: f64,
}

impl TripletLossConfig {
    pub fn new(margin: f64) -> Result<Self> {
        if !margin.is_finite() || margin < 0.0 {
            return Err(Error::Argument(format!(
                "margin must be finite and non-negative, got {margin}"
            )));
        }
        Ok(TripletLossConfig { margin })
    }
}

/// Negative-example hardness relative to an anchor/positive pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Hardness {
    /// d(a,n) >= d(a,p) + m: zero loss, ignored by optimization.
    Easy,
    /// d(a,p) <= d(a,n) < d(a,p) + m: inside the margin band.
    SemiHard,
    /// d(a,n) < d(a,p): negative closer than the positive.
    Hard,
}

/// Every valid triplet of batch positions, in lexicographic (a, p, n)
/// order: label[a] == label[p], a != p, label[a] != label[n].
pub fn mine_all_valid(labels: &[usize]) -> Vec<Triplet> {
    let b = labels.len();
    let mut out = Vec::new();
    for a in 0..b {
        for p in 0..b {
            if p == a || labels[p] != labels[a] {
                continue;
            }
            for n in 0..b {
                if labels[n] != labels[a] {
                    out.push(Triplet {
                        anchor: a,
                        positive: p,
                        negative: n,
                    });
                }
            }
        }
    }
    out
}

/// Closed-form count of valid triplets: sum over classes of
/// c_k * (c_k - 1) * (B - c_k).
pub fn valid_triplet_count(labels: &[usize]) -> usize {
    let b = labels.len();
    let mut counts = std::collections::BTreeMap::new();
    for &l in labels {
        *counts.entry(l).or_insert(0usize) += 1;
    }
    counts
        .values()
        .map(|&ck| ck * ck.saturating_sub(1) * (b - ck))
        .sum()
}

fn euclidean<F: Scalar>(a: ArrayView1<F>, b: ArrayView1<F>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(&x, &y)| {
            let d = x.to_f64() - y.to_f64();
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

fn check_indices<F: Scalar>(embeddings: &Array2<F>, triplets: &[Triplet]) -> Result<()> {
    let n = embeddings.nrows();
    for t in triplets {
        if t.anchor >= n || t.positive >= n || t.negative >= n {
            return Err(Error::Argument(format!(
                "triplet ({}, {}, {}) out of range for batch of {n}",
                t.anchor, t.positive, t.negative
            )));
        }
    }
    Ok(())
}

/// Mean loss over the mined triplets plus the per-triplet values. The mean
/// over an empty triplet set is 0 (logged, since it starves the optimizer).
pub fn triplet_loss<F: Scalar>(
    embeddings: &Array2<F>,
    triplets: &[Triplet],
    config: TripletLossConfig,
) -> Result<(f64, Vec<f64>)> {
    check_indices(embeddings, triplets)?;
    if triplets.is_empty() {
        log::warn!("mini-batch mined zero valid triplets; loss is 0");
        return Ok((0.0, Vec::new()));
    }
    let per: Vec<f64> = triplets
        .iter()
        .map(|t| {
            let d_ap = euclidean(embeddings.row(t.anchor), embeddings.row(t.positive));
            let d_an = euclidean(embeddings.row(t.anchor), embeddings.row(t.negative));
            (d_ap - d_an + config.margin).max(0.0)
        })
        .collect();
    let mean = per.iter().sum::<f64>() / per.len() as f64;
    Ok((mean, per))
}

/// Gradient of the mean triplet loss with respect to the embeddings.
/// Inactive triplets (loss exactly 0) are skipped, and coincident pairs
/// (d = 0) contribute nothing, avoiding the 1/d blow-up.
pub fn triplet_grad<F: Scalar>(
    embeddings: &Array2<F>,
    triplets: &[Triplet],
    config: TripletLossConfig,
) -> Result<Array2<F>> {
    check_indices(embeddings, triplets)?;
    let (rows, dim) = (embeddings.nrows(), embeddings.ncols());
    let mut grad = Array2::<f64>::zeros((rows, dim));
    if triplets.is_empty() {
        return Ok(grad.mapv(F::from_f64));
    }
    let scale = 1.0 / triplets.len() as f64;

    for t in triplets {
        let a = embeddings.row(t.anchor);
        let p = embeddings.row(t.positive);
        let n = embeddings.row(t.negative);
        let d_ap = euclidean(a, p);
        let d_an = euclidean(a, n);
        if d_ap - d_an + config.margin <= 0.0 {
            continue;
        }
        // d(a,p) pulls a and p together: d/da d(a,p) = (a - p) / d.
        if d_ap > 0.0 {
            let inv = scale / d_ap;
            for j in 0..dim {
                let diff = (a[j].to_f64() - p[j].to_f64()) * inv;
                grad[[t.anchor, j]] += diff;
                grad[[t.positive, j]] -= diff;
            }
        }
        // -d(a,n) pushes a and n apart.
        if d_an > 0.0 {
            let inv = scale / d_an;
            for j in 0..dim {
                let diff = (a[j].to_f64() - n[j].to_f64()) * inv;
                grad[[t.anchor, j]] -= diff;
                grad[[t.negative, j]] += diff;
            }
        }
    }
    Ok(grad.mapv(F::from_f64))
}

/// Classify the negative of a valid triplet (see [`Hardness`]).
pub fn classify_hardness<F: Scalar>(
    embeddings: &Array2<F>,
    triplet: &Triplet,
    config: TripletLossConfig,
) -> Hardness {
    let a = embeddings.row(triplet.anchor);
    let d_ap = euclidean(a, embeddings.row(triplet.positive));
    let d_an = euclidean(a, embeddings.row(triplet.negative));
    if d_an < d_ap {
        Hardness::Hard
    } else if d_an < d_ap + config.margin {
        Hardness::SemiHard
    } else {
        Hardness::Easy
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cfg(m: f64) -> TripletLossConfig {
        TripletLossConfig::new(m).unwrap()
    }

    /// Brute-force oracle: filter the full index cube by the validity
    /// predicate.
    fn brute_force_triplets(labels: &[usize]) -> Vec<Triplet> {
        let b = labels.len();
        let mut out = Vec::new();
        for a in 0..b {
            for p in 0..b {
                for n in 0..b {
                    if labels[a] == labels[p] && a != p && labels[a] != labels[n] {
                        out.push(Triplet { anchor: a, positive: p, negative: n });
                    }
                }
            }
        }
        out
    }

    #[test]
    fn three_example_batch_mines_two_triplets() {
        let mined = mine_all_valid(&[0, 0, 1]);
        assert_eq!(
            mined,
            vec![
                Triplet { anchor: 0, positive: 1, negative: 2 },
                Triplet { anchor: 1, positive: 0, negative: 2 },
            ]
        );
    }

    #[test]
    fn single_class_batch_mines_nothing() {
        assert!(mine_all_valid(&[3, 3, 3, 3]).is_empty());
        assert_eq!(valid_triplet_count(&[3, 3, 3, 3]), 0);
    }

    #[test]
    fn mining_matches_brute_force_on_random_batches() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..100 {
            let b = rng.random_range(1..=30);
            let c = rng.random_range(1..=5);
            let labels: Vec<usize> = (0..b).map(|_| rng.random_range(0..c)).collect();
            let mined = mine_all_valid(&labels);
            assert_eq!(mined, brute_force_triplets(&labels));
            assert_eq!(mined.len(), valid_triplet_count(&labels));
        }
    }

    #[test]
    fn hinge_boundary_gives_zero_loss() {
        // d(a,p) = 0 with a != p, d(a,n) = m: exactly at the hinge.
        let m = 0.3;
        let e = array![[0.0f64], [0.0], [m]];
        let (mean, per) = triplet_loss(&e, &mine_all_valid(&[0, 0, 1]), cfg(m)).unwrap();
        assert_eq!(per, vec![0.0, 0.0]);
        assert_eq!(mean, 0.0);
    }

    #[test]
    fn collapsed_negative_evaluates_directly() {
        // 1-D: a=0, p=1, n=0 -> max(1 - 0 + 0.3, 0) = 1.3.
        let e = array![[0.0f64], [1.0], [0.0]];
        let t = [Triplet { anchor: 0, positive: 1, negative: 2 }];
        let (mean, per) = triplet_loss(&e, &t, cfg(0.3)).unwrap();
        assert!((per[0] - 1.3).abs() < 1e-12);
        assert!((mean - 1.3).abs() < 1e-12);
    }

    #[test]
    fn loss_matches_scalar_recomputation_on_random_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let b = rng.random_range(4..16);
            let labels: Vec<usize> = (0..b).map(|_| rng.random_range(0..3)).collect();
            let e = Array2::from_shape_fn((b, 5), |_| rng.random::<f64>() * 4.0 - 2.0);
            let triplets = mine_all_valid(&labels);
            if triplets.is_empty() {
                continue;
            }
            let (mean, per) = triplet_loss(&e, &triplets, cfg(0.5)).unwrap();
            let mut expect_sum = 0.0;
            for (t, &got) in triplets.iter().zip(per.iter()) {
                let d = |i: usize, j: usize| -> f64 {
                    (0..5)
                        .map(|k| (e[[i, k]] - e[[j, k]]).powi(2))
                        .sum::<f64>()
                        .sqrt()
                };
                let expected = (d(t.anchor, t.positive) - d(t.anchor, t.negative) + 0.5).max(0.0);
                assert!((got - expected).abs() < 1e-12);
                expect_sum += expected;
            }
            assert!((mean - expect_sum / triplets.len() as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn easy_triplets_have_zero_gradient() {
        let e = array![[0.0f64, 0.0], [0.1, 0.0], [10.0, 10.0]];
        let g = triplet_grad(&e, &mine_all_valid(&[0, 0, 1]), cfg(0.3)).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_active_triplet_gradient_by_hand() {
        // 1-D: a=0, p=1, n=-1, margin large enough to activate the hinge.
        // dL/dp = (p-a)/d(a,p) = 1, dL/dn = -(n-a)/d(a,n) = 1,
        // dL/da = -(dL/dp + dL/dn) = -2... with signs per the derivative:
        // dL/da = (a-p)/d_ap - (a-n)/d_an = -1 - 1 = -2.
        let e = array![[0.0f64], [1.0], [-1.0]];
        let t = [Triplet { anchor: 0, positive: 1, negative: 2 }];
        let g = triplet_grad(&e, &t, cfg(5.0)).unwrap();
        assert!((g[[0, 0]] - (-2.0)).abs() < 1e-12);
        assert!((g[[1, 0]] - 1.0).abs() < 1e-12);
        assert!((g[[2, 0]] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn gradient_matches_finite_differences_away_from_kinks() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut tested = 0;
        while tested < 10 {
            let b = rng.random_range(5..12);
            let labels: Vec<usize> = (0..b).map(|_| rng.random_range(0..3)).collect();
            let e = Array2::from_shape_fn((b, 4), |_| rng.random::<f64>() * 2.0 - 1.0);
            let triplets = mine_all_valid(&labels);
            if triplets.is_empty() {
                continue;
            }
            let (_, per) = triplet_loss(&e, &triplets, cfg(0.4)).unwrap();
            // Skip draws with any per-triplet loss near the hinge kink.
            if per.iter().any(|&l| l.abs() < 1e-6) {
                continue;
            }
            tested += 1;

            let analytic = triplet_grad(&e, &triplets, cfg(0.4)).unwrap();
            let fd = crate::net::finite_difference(
                |flat: &[f64]| {
                    let m = Array2::from_shape_vec(e.raw_dim(), flat.to_vec()).unwrap();
                    triplet_loss(&m, &triplets, cfg(0.4)).unwrap().0
                },
                e.as_slice().unwrap(),
                1e-6,
            );
            for (idx, (&a, &n)) in analytic.iter().zip(fd.iter()).enumerate() {
                let rel = (a - n).abs() / a.abs().max(n.abs()).max(1e-9);
                assert!(
                    rel < 1e-6,
                    "entry {idx}: analytic {a} vs numeric {n} (rel {rel})"
                );
            }
        }
    }

    #[test]
    fn translation_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let labels = vec![0, 1, 0, 2, 1, 2];
        let e = Array2::from_shape_fn((6, 3), |_| rng.random::<f64>());
        let shifted = &e + &Array2::from_elem((6, 3), 17.5);
        let triplets = mine_all_valid(&labels);
        let (l1, _) = triplet_loss(&e, &triplets, cfg(0.3)).unwrap();
        let (l2, _) = triplet_loss(&shifted, &triplets, cfg(0.3)).unwrap();
        assert!((l1 - l2).abs() < 1e-9);
        for t in &triplets {
            assert_eq!(
                classify_hardness(&e, t, cfg(0.3)),
                classify_hardness(&shifted, t, cfg(0.3))
            );
        }
    }

    #[test]
    fn hardness_taxonomy() {
        // d(a,p) = 1; negatives at 0.5 (hard), 1.1 (semi-hard with m=0.3),
        // and exactly 1.3 (easy, loss 0).
        let e = array![[0.0f64], [1.0], [0.5], [1.1], [1.3]];
        let m = cfg(0.3);
        let t = |n| Triplet { anchor: 0, positive: 1, negative: n };
        assert_eq!(classify_hardness(&e, &t(2), m), Hardness::Hard);
        assert_eq!(classify_hardness(&e, &t(3), m), Hardness::SemiHard);
        assert_eq!(classify_hardness(&e, &t(4), m), Hardness::Easy);
        let (_, per) = triplet_loss(&e, &[t(4)], m).unwrap();
        assert_eq!(per[0], 0.0);
    }

    #[test]
    fn out_of_range_index_is_argument_error() {
        let e = array![[0.0f64], [1.0]];
        let t = [Triplet { anchor: 0, positive: 1, negative: 9 }];
        assert!(matches!(
            triplet_loss(&e, &t, cfg(0.1)),
            Err(Error::Argument(_))
        ));
        assert!(matches!(
            triplet_grad(&e, &t, cfg(0.1)),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn negative_margin_rejected() {
        assert!(TripletLossConfig::new(-0.1).is_err());
        assert!(TripletLossConfig::new(f64::NAN).is_err());
    }
}
