//! Datasets, synthetic generators, and seeded class-balanced splits.

use ndarray::{Array2, Array4, ArrayD, Axis, IxDyn};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

use crate::{Error, Result};

mod blobs;
mod csv;
mod glyphs;
mod idx;

pub use blobs::make_blobs;
pub use csv::{dataset_from_csv, dataset_to_csv};
pub use glyphs::make_glyph_digits;
pub use idx::{
    load_idx, parse_idx_images, parse_idx_labels, write_idx_images, write_idx_labels,
};

/// Example features: one image tensor per example (n, h, w, c) or one flat
/// vector per example (n, d).
#[derive(Debug, Clone)]
pub enum Features {
    Images(Array4<f32>),
    Flat(Array2<f32>),
}

impl Features {
    pub fn len(&self) -> usize {
        match self {
            Features::Images(a) => a.shape()[0],
            Features::Flat(a) => a.shape()[0],
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Per-example shape, without the leading example axis.
    pub fn example_shape(&self) -> Vec<usize> {
        match self {
            Features::Images(a) => a.shape()[1..].to_vec(),
            Features::Flat(a) => vec![a.shape()[1]],
        }
    }
}

/// A collection of examples with optional class labels.
#[derive(Debug, Clone)]
pub struct Dataset {
    features: Features,
    labels: Option<Vec<usize>>,
    num_classes: usize,
}

impl Dataset {
    /// Build a dataset, validating the label/feature contract.
    pub fn new(features: Features, labels: Option<Vec<usize>>, num_classes: usize) -> Result<Self> {
        if let Some(ref y) = labels {
            if y.len() != features.len() {
                return Err(Error::Consistency(format!(
                    "{} examples but {} labels",
                    features.len(),
                    y.len()
                )));
            }
            if let Some(&bad) = y.iter().find(|&&l| l >= num_classes) {
                return Err(Error::Argument(format!(
                    "label {bad} out of range for {num_classes} classes"
                )));
            }
        }
        if num_classes == 0 {
            return Err(Error::Argument("num_classes must be positive".into()));
        }
        Ok(Dataset {
            features,
            labels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn features(&self) -> &Features {
        &self.features
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn example_shape(&self) -> Vec<usize> {
        self.features.example_shape()
    }

    /// Labels of the given examples. Errors when the dataset is unlabeled.
    pub fn labels_at(&self, indices: &[usize]) -> Result<Vec<usize>> {
        let y = self
            .labels()
            .ok_or_else(|| Error::Argument("dataset has no labels".into()))?;
        indices
            .iter()
            .map(|&i| {
                y.get(i)
                    .copied()
                    .ok_or_else(|| Error::Argument(format!("index {i} out of range")))
            })
            .collect()
    }

    /// Gather the given examples into a batch tensor of element type `F`,
    /// shaped (b, h, w, c) for images or (b, d) for flat features.
    pub fn batch<F: crate::net::Scalar>(&self, indices: &[usize]) -> Result<ArrayD<F>> {
        let n = self.len();
        if let Some(&bad) = indices.iter().find(|&&i| i >= n) {
            return Err(Error::Argument(format!(
                "index {bad} out of range for dataset of {n}"
            )));
        }
        match &self.features {
            Features::Images(a) => {
                let (h, w, c) = (a.shape()[1], a.shape()[2], a.shape()[3]);
                let mut out = Array4::<F>::zeros((indices.len(), h, w, c));
                for (row, &i) in indices.iter().enumerate() {
                    out.index_axis_mut(Axis(0), row)
                        .assign(&a.index_axis(Axis(0), i).mapv(|v| F::from_f64(v as f64)));
                }
                Ok(out.into_dyn())
            }
            Features::Flat(a) => {
                let d = a.shape()[1];
                let mut out = Array2::<F>::zeros((indices.len(), d));
                for (row, &i) in indices.iter().enumerate() {
                    out.index_axis_mut(Axis(0), row)
                        .assign(&a.index_axis(Axis(0), i).mapv(|v| F::from_f64(v as f64)));
                }
                Ok(out.into_dyn())
            }
        }
    }

    /// Batch of every example, in dataset order.
    pub fn full_batch<F: crate::net::Scalar>(&self) -> Result<ArrayD<F>> {
        let all: Vec<usize> = (0..self.len()).collect();
        self.batch(&all)
    }
}

/// Empty dynamic-shape marker used by tests.
pub fn empty_flat(dim: usize) -> Features {
    Features::Flat(Array2::zeros((0, dim)))
}

/// A labeled/unlabeled partition of a training set plus its test set.
#[derive(Debug, Clone)]
pub struct Split {
    pub labeled_idx: Vec<usize>,
    pub unlabeled_idx: Vec<usize>,
    pub test: Dataset,
}

/// Draw a class-balanced labeled subset of `train` (exactly
/// `n_labeled / num_classes` per class, uniformly without replacement) and
/// return it together with the complementary unlabeled pool and the test set.
///
/// Deterministic in `seed`; both index lists come back sorted ascending.
pub fn split_balanced(train: &Dataset, test: Dataset, n_labeled: usize, seed: u64) -> Result<Split> {
    let labels = train
        .labels()
        .ok_or_else(|| Error::Argument("balanced split requires a labeled training set".into()))?;
    let c = train.num_classes();
    if n_labeled == 0 || n_labeled % c != 0 {
        return Err(Error::Argument(format!(
            "n_labeled={n_labeled} is not a positive multiple of {c} classes"
        )));
    }
    let per_class = n_labeled / c;

    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); c];
    for (i, &y) in labels.iter().enumerate() {
        by_class[y].push(i);
    }
    if let Some((cls, members)) = by_class
        .iter()
        .enumerate()
        .find(|(_, m)| m.len() < per_class)
    {
        return Err(Error::Argument(format!(
            "class {cls} has {} examples, need {per_class}",
            members.len()
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut labeled = Vec::with_capacity(n_labeled);
    for members in &mut by_class {
        partial_shuffle(members, per_class, &mut rng);
        labeled.extend_from_slice(&members[..per_class]);
    }
    labeled.sort_unstable();

    let chosen: std::collections::HashSet<usize> = labeled.iter().copied().collect();
    let unlabeled: Vec<usize> = (0..train.len()).filter(|i| !chosen.contains(i)).collect();

    Ok(Split {
        labeled_idx: labeled,
        unlabeled_idx: unlabeled,
        test,
    })
}

/// Fisher-Yates over the first `k` positions only.
fn partial_shuffle(items: &mut [usize], k: usize, rng: &mut ChaCha8Rng) {
    let n = items.len();
    for i in 0..k.min(n.saturating_sub(1)) {
        let j = rng.random_range(i..n);
        items.swap(i, j);
    }
}

/// Uniform seeded subsample of `k` items from `0..n` (sorted ascending).
pub fn seeded_subsample(n: usize, k: usize, seed: u64) -> Vec<usize> {
    if k >= n {
        return (0..n).collect();
    }
    let mut all: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    partial_shuffle(&mut all, k, &mut rng);
    let mut picked = all[..k].to_vec();
    picked.sort_unstable();
    picked
}

/// Validate that image features lie in [0, 1]; used by loaders.
pub(crate) fn check_unit_range(features: &Features) -> Result<()> {
    if let Features::Images(a) = features {
        if a.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(Error::Numeric(
                "image features outside [0, 1] after scaling".into(),
            ));
        }
    }
    Ok(())
}

/// Shape helper for dynamic arrays in tests.
pub fn dyn_shape(dims: &[usize]) -> IxDyn {
    IxDyn(dims)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_dataset(n_per_class: usize, c: usize) -> Dataset {
        let n = n_per_class * c;
        let feats = Array2::from_shape_fn((n, 2), |(i, j)| (i * 2 + j) as f32);
        let labels: Vec<usize> = (0..n).map(|i| i % c).collect();
        Dataset::new(Features::Flat(feats), Some(labels), c).unwrap()
    }

    #[test]
    fn balanced_split_counts_per_class() {
        let train = toy_dataset(20, 4);
        let test = toy_dataset(2, 4);
        let split = split_balanced(&train, test, 12, 9).unwrap();
        assert_eq!(split.labeled_idx.len(), 12);
        assert_eq!(split.unlabeled_idx.len(), 80 - 12);

        let labels = train.labels().unwrap();
        let mut hist = [0usize; 4];
        for &i in &split.labeled_idx {
            hist[labels[i]] += 1;
        }
        assert_eq!(hist, [3, 3, 3, 3]);
    }

    #[test]
    fn split_partitions_are_disjoint_and_complete() {
        let train = toy_dataset(10, 2);
        let split = split_balanced(&train, toy_dataset(1, 2), 4, 3).unwrap();
        let mut all = split.labeled_idx.clone();
        all.extend_from_slice(&split.unlabeled_idx);
        all.sort_unstable();
        assert_eq!(all, (0..20).collect::<Vec<_>>());
    }

    #[test]
    fn split_is_deterministic_in_seed() {
        let train = toy_dataset(50, 5);
        let a = split_balanced(&train, toy_dataset(1, 5), 25, 77).unwrap();
        let b = split_balanced(&train, toy_dataset(1, 5), 25, 77).unwrap();
        assert_eq!(a.labeled_idx, b.labeled_idx);
        assert_eq!(a.unlabeled_idx, b.unlabeled_idx);
        let c = split_balanced(&train, toy_dataset(1, 5), 25, 78).unwrap();
        assert_ne!(a.labeled_idx, c.labeled_idx);
    }

    #[test]
    fn indivisible_n_labeled_is_rejected() {
        let train = toy_dataset(40, 3);
        assert!(matches!(
            split_balanced(&train, toy_dataset(1, 3), 100, 0),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn full_split_leaves_empty_pool() {
        let train = toy_dataset(3, 2);
        let split = split_balanced(&train, toy_dataset(1, 2), 6, 0).unwrap();
        assert!(split.unlabeled_idx.is_empty());
        assert_eq!(split.labeled_idx, vec![0, 1, 2, 3, 4, 5]);
    }

    #[test]
    fn labels_out_of_range_rejected() {
        let feats = Features::Flat(Array2::zeros((2, 2)));
        assert!(matches!(
            Dataset::new(feats, Some(vec![0, 5]), 3),
            Err(Error::Argument(_))
        ));
    }
}
