//! Self-training meta-loops.
//!
//! Each meta-iteration trains the embedding network on the current labeled
//! set with the batch-all triplet loss, embeds the unlabeled pool,
//! pseudo-labels it (1-NN, optionally refined by label propagation), and
//! promotes the most confident slice of the pool into the labeled set for
//! the next round. Ground-truth labels are never overwritten and promoted
//! examples are never revoked.

use std::time::Instant;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{seeded_subsample, Dataset, Split};
use crate::embedknn::{
    embed_dataset, knn_predict, select_top_by_distance, SelectionBasis,
};
use crate::llgc::{affinity, normalize_affinity, propagate, seed_label_matrix, select_top_by_score, LlgcConfig};
use crate::net::{adam_step, AdamConfig, AdamState, EmbeddingModel, Scalar, init_model};
use crate::seeds::{derive, Purpose};
use crate::triplet::{mine_all_valid, triplet_grad, triplet_loss, TripletLossConfig};
use crate::{Error, Result};

/// Which pseudo-labeling route drives selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    /// 1-NN labels, selection by smallest embedding distance.
    Siamese,
    /// 1-NN-seeded label propagation, selection by propagation score.
    Llgc,
}

impl std::str::FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "siamese" => Ok(Variant::Siamese),
            "llgc" => Ok(Variant::Llgc),
            other => Err(Error::Config(format!(
                "unknown variant {other:?}; expected siamese or llgc"
            ))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SelfTrainConfig {
    pub variant: Variant,
    pub meta_iterations: usize,
    /// Percentage of the pool promoted per meta-iteration, in (0, 100].
    pub selection_percent: f64,
    pub epochs_per_iter: usize,
    pub batch_size: usize,
    pub margin: f64,
    pub llgc: LlgcConfig,
    pub selection_basis: SelectionBasis,
    /// Keep network parameters across meta-iterations (vs. reinitializing).
    pub warm_start: bool,
    pub adam: AdamConfig,
    /// Cap on labeled rows anchoring the propagation graph; beyond it a
    /// seeded uniform subsample anchors the graph.
    pub llgc_graph_cap: usize,
    /// Evaluate on a seeded subsample of the test set of this size
    /// (0 = the whole test set).
    pub eval_subset: usize,
    pub seed: u64,
}

impl SelfTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.meta_iterations == 0 {
            return Err(Error::Argument("meta_iterations must be at least 1".into()));
        }
        if !(self.selection_percent > 0.0 && self.selection_percent <= 100.0) {
            return Err(Error::Argument(format!(
                "selection_percent {} outside (0, 100]",
                self.selection_percent
            )));
        }
        if self.batch_size < 2 {
            return Err(Error::Argument("batch_size must be at least 2".into()));
        }
        TripletLossConfig::new(self.margin)?;
        if self.llgc_graph_cap == 0 {
            return Err(Error::Argument("llgc_graph_cap must be positive".into()));
        }
        Ok(())
    }
}

impl Default for SelfTrainConfig {
    fn default() -> Self {
        SelfTrainConfig {
            variant: Variant::Siamese,
            meta_iterations: 25,
            selection_percent: 10.0,
            epochs_per_iter: 200,
            batch_size: 100,
            margin: 0.3,
            llgc: LlgcConfig::default(),
            selection_basis: SelectionBasis::Current,
            warm_start: true,
            adam: AdamConfig::default(),
            llgc_graph_cap: 2000,
            eval_subset: 0,
            seed: 0,
        }
    }
}

/// The evolving labeled/unlabeled partition. Pseudo-labeled entries stay
/// tagged so audits can separate them from ground truth.
#[derive(Debug, Clone)]
pub struct MetaState {
    pub labeled_idx: Vec<usize>,
    pub labeled_labels: Vec<usize>,
    pub is_pseudo: Vec<bool>,
    pub unlabeled_idx: Vec<usize>,
    pub iteration: usize,
}

impl MetaState {
    fn from_split(train: &Dataset, split: &Split) -> Result<Self> {
        let labels = train.labels_at(&split.labeled_idx)?;
        let state = MetaState {
            labeled_idx: split.labeled_idx.clone(),
            labeled_labels: labels,
            is_pseudo: vec![false; split.labeled_idx.len()],
            unlabeled_idx: split.unlabeled_idx.clone(),
            iteration: 0,
        };
        state.check_disjoint()?;
        Ok(state)
    }

    fn check_disjoint(&self) -> Result<()> {
        let labeled: std::collections::HashSet<usize> = self.labeled_idx.iter().copied().collect();
        if self.unlabeled_idx.iter().any(|i| labeled.contains(i)) {
            return Err(Error::Consistency(
                "labeled and unlabeled partitions overlap".into(),
            ));
        }
        Ok(())
    }

    /// Promote pool positions into the labeled set with the given labels.
    fn promote(&mut self, positions: &[usize], labels: &[usize]) {
        let mark: std::collections::HashSet<usize> = positions.iter().copied().collect();
        for (&pos, &label) in positions.iter().zip(labels.iter()) {
            self.labeled_idx.push(self.unlabeled_idx[pos]);
            self.labeled_labels.push(label);
            self.is_pseudo.push(true);
        }
        self.unlabeled_idx = self
            .unlabeled_idx
            .iter()
            .enumerate()
            .filter(|(pos, _)| !mark.contains(pos))
            .map(|(_, &idx)| idx)
            .collect();
    }
}

/// Metrics for one meta-iteration.
#[derive(Debug, Clone)]
pub struct IterationRecord {
    pub iteration: usize,
    pub labeled_size: usize,
    pub pool_size: usize,
    pub selected: usize,
    pub mean_triplet_loss: f64,
    /// Correctly pseudo-labeled among this iteration's selection, when
    /// ground truth is known.
    pub pseudo_correct: Option<usize>,
    pub pseudo_total: usize,
    pub test_error_pct: f64,
    /// Wall time of the iteration. Reported on stderr and in the timing
    /// file, never in the deterministic report CSV.
    pub seconds: f64,
}

impl IterationRecord {
    pub fn pseudo_accuracy(&self) -> Option<f64> {
        self.pseudo_correct.map(|c| {
            if self.pseudo_total == 0 {
                f64::NAN
            } else {
                c as f64 / self.pseudo_total as f64
            }
        })
    }
}

/// Full history of one run.
#[derive(Debug, Clone)]
pub struct RunReport {
    pub records: Vec<IterationRecord>,
    pub final_test_error_pct: f64,
}

/// Train the model in place with the batch-all triplet loss: `epochs`
/// passes over the labeled examples, shuffled each epoch, one Adam step
/// per mini-batch (the trailing partial batch included). Returns the mean
/// triplet loss over the final epoch.
#[allow(clippy::too_many_arguments)]
pub fn train_embedding<F: Scalar>(
    model: &mut EmbeddingModel<F>,
    dataset: &Dataset,
    indices: &[usize],
    labels: &[usize],
    epochs: usize,
    batch_size: usize,
    margin: f64,
    adam: AdamConfig,
    seed: u64,
) -> Result<f64> {
    if indices.len() != labels.len() {
        return Err(Error::Argument("index/label length mismatch".into()));
    }
    if batch_size < 2 {
        return Err(Error::Argument("batch_size must be at least 2".into()));
    }
    let distinct: std::collections::HashSet<usize> = labels.iter().copied().collect();
    if distinct.len() < 2 {
        return Err(Error::Training(
            "labeled set has a single class; no valid triplets exist".into(),
        ));
    }
    let loss_cfg = TripletLossConfig::new(margin)?;
    let mut adam_state = AdamState::new(model, adam);
    let mut last_epoch_loss = 0.0;

    let mut order: Vec<usize> = (0..indices.len()).collect();
    for epoch in 0..epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(derive(seed, Purpose::Shuffle, epoch as u64));
        shuffle(&mut order, &mut rng);

        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(batch_size) {
            let batch_indices: Vec<usize> = chunk.iter().map(|&o| indices[o]).collect();
            let batch_labels: Vec<usize> = chunk.iter().map(|&o| labels[o]).collect();
            let batch = dataset.batch::<F>(&batch_indices)?;

            let (embeddings, cache) = model.forward_cached(&batch)?;
            let triplets = mine_all_valid(&batch_labels);
            let (mean_loss, _) = triplet_loss(&embeddings, &triplets, loss_cfg)?;
            let grad_embed = triplet_grad(&embeddings, &triplets, loss_cfg)?;
            let grads = model.backward_cached(&cache, &grad_embed)?;
            adam_step(model, &grads, &mut adam_state)?;

            epoch_loss += mean_loss;
            batches += 1;
        }
        if batches > 0 {
            last_epoch_loss = epoch_loss / batches as f64;
        }
    }
    Ok(last_epoch_loss)
}

fn shuffle(items: &mut [usize], rng: &mut ChaCha8Rng) {
    for i in (1..items.len()).rev() {
        let j = rng.random_range(0..=i);
        items.swap(i, j);
    }
}

/// 1-NN test error (percent) of the model against a labeled reference set.
/// `eval_subset > 0` evaluates on a seeded subsample of the test set.
#[allow(clippy::too_many_arguments)]
pub fn evaluate<F: Scalar>(
    model: &EmbeddingModel<F>,
    dataset: &Dataset,
    reference_idx: &[usize],
    reference_labels: &[usize],
    test: &Dataset,
    eval_subset: usize,
    seed: u64,
) -> Result<f64> {
    if reference_idx.is_empty() {
        return Err(Error::Argument("empty evaluation reference set".into()));
    }
    let test_labels = test
        .labels()
        .ok_or_else(|| Error::Argument("test set has no labels".into()))?;

    let test_indices: Vec<usize> = if eval_subset > 0 && eval_subset < test.len() {
        seeded_subsample(test.len(), eval_subset, derive(seed, Purpose::EvalSubset, 0))
    } else {
        (0..test.len()).collect()
    };

    let ref_embed = embed_dataset(model, dataset, reference_idx)?;
    let test_embed = embed_dataset(model, test, &test_indices)?;
    let preds = knn_predict(&test_embed.rows, &ref_embed.rows, reference_labels, 1)?;

    let wrong = preds
        .iter()
        .zip(test_indices.iter())
        .filter(|(p, &ti)| p.label != test_labels[ti])
        .count();
    Ok(100.0 * wrong as f64 / test_indices.len() as f64)
}

/// Per-iteration hook; receives each record as soon as it is complete so
/// interrupted runs stay analyzable.
pub type RecordSink<'a> = &'a mut dyn FnMut(&IterationRecord);

/// Self-training with 1-NN pseudo-labels and distance-ranked selection.
pub fn siamese_self_train<F: Scalar>(
    train: &Dataset,
    split: &Split,
    model: EmbeddingModel<F>,
    config: &SelfTrainConfig,
    sink: RecordSink,
) -> Result<RunReport> {
    run_meta_loop(train, split, model, config, Variant::Siamese, sink).map(|(r, _)| r)
}

/// Self-training with LLGC-refined pseudo-labels and score-ranked selection.
pub fn llgc_self_train<F: Scalar>(
    train: &Dataset,
    split: &Split,
    model: EmbeddingModel<F>,
    config: &SelfTrainConfig,
    sink: RecordSink,
) -> Result<RunReport> {
    run_meta_loop(train, split, model, config, Variant::Llgc, sink).map(|(r, _)| r)
}

fn run_meta_loop<F: Scalar>(
    train: &Dataset,
    split: &Split,
    mut model: EmbeddingModel<F>,
    config: &SelfTrainConfig,
    variant: Variant,
    sink: RecordSink,
) -> Result<(RunReport, EmbeddingModel<F>)> {
    config.validate()?;
    let mut state = MetaState::from_split(train, split)?;
    let initial_pool = state.unlabeled_idx.len();
    let truth = train.labels();
    let mut records: Vec<IterationRecord> = Vec::with_capacity(config.meta_iterations);

    for iteration in 1..=config.meta_iterations {
        let started = Instant::now();
        state.iteration = iteration;

        if !config.warm_start && iteration > 1 {
            model = init_model(
                model.input_shape(),
                &model.specs().to_vec(),
                derive(config.seed, Purpose::ModelInit, iteration as u64),
            )?;
        }

        let mean_loss = train_embedding(
            &mut model,
            train,
            &state.labeled_idx,
            &state.labeled_labels,
            config.epochs_per_iter,
            config.batch_size,
            config.margin,
            config.adam,
            derive(config.seed, Purpose::Shuffle, iteration as u64),
        )?;

        let mut selected_count = 0usize;
        let mut pseudo_correct = None;
        if state.unlabeled_idx.is_empty() {
            log::info!("meta-iteration {iteration}: pool exhausted, retraining only");
        } else {
            let embed_l = embed_dataset(&model, train, &state.labeled_idx)?;
            let embed_u = embed_dataset(&model, train, &state.unlabeled_idx)?;
            let basis = match config.selection_basis {
                SelectionBasis::Current => state.unlabeled_idx.len(),
                SelectionBasis::Initial => initial_pool,
            };

            let (positions, labels) = match variant {
                Variant::Siamese => {
                    let preds =
                        knn_predict(&embed_u.rows, &embed_l.rows, &state.labeled_labels, 1)?;
                    let positions =
                        select_top_by_distance(&preds, config.selection_percent, basis)?;
                    let labels: Vec<usize> =
                        positions.iter().map(|&pos| preds[pos].label).collect();
                    (positions, labels)
                }
                Variant::Llgc => {
                    let preds =
                        knn_predict(&embed_u.rows, &embed_l.rows, &state.labeled_labels, 1)?;
                    let knn_labels: Vec<usize> = preds.iter().map(|p| p.label).collect();
                    llgc_select(
                        &embed_l.rows,
                        &embed_u.rows,
                        &state.labeled_labels,
                        &knn_labels,
                        train.num_classes(),
                        config,
                        iteration,
                        basis,
                    )?
                }
            };

            selected_count = positions.len();
            if let Some(truth) = truth {
                pseudo_correct = Some(
                    positions
                        .iter()
                        .zip(labels.iter())
                        .filter(|(&pos, &label)| truth[state.unlabeled_idx[pos]] == label)
                        .count(),
                );
            }
            state.promote(&positions, &labels);
            state.check_disjoint()?;
        }

        let test_error = evaluate(
            &model,
            train,
            &state.labeled_idx,
            &state.labeled_labels,
            &split.test,
            config.eval_subset,
            config.seed,
        )?;

        let record = IterationRecord {
            iteration,
            labeled_size: state.labeled_idx.len(),
            pool_size: state.unlabeled_idx.len(),
            selected: selected_count,
            mean_triplet_loss: mean_loss,
            pseudo_correct,
            pseudo_total: selected_count,
            test_error_pct: test_error,
            seconds: started.elapsed().as_secs_f64(),
        };
        log::info!(
            "meta-iteration {iteration}: labeled {} pool {} loss {:.4} test error {:.2}%",
            record.labeled_size,
            record.pool_size,
            record.mean_triplet_loss,
            record.test_error_pct
        );
        sink(&record);
        records.push(record);
    }

    let final_test_error_pct = records
        .last()
        .map(|r| r.test_error_pct)
        .unwrap_or(f64::NAN);
    Ok((
        RunReport {
            records,
            final_test_error_pct,
        },
        model,
    ))
}

/// Label propagation step of the LLGC variant: build the graph over
/// (capped) labeled rows plus the whole pool, propagate the seeded label
/// matrix, and rank the pool by propagation score.
#[allow(clippy::too_many_arguments)]
fn llgc_select<F: Scalar>(
    embed_l: &ndarray::Array2<F>,
    embed_u: &ndarray::Array2<F>,
    labels_l: &[usize],
    knn_labels_u: &[usize],
    num_classes: usize,
    config: &SelfTrainConfig,
    iteration: usize,
    basis: usize,
) -> Result<(Vec<usize>, Vec<usize>)> {
    let anchor_rows: Vec<usize> = if labels_l.len() > config.llgc_graph_cap {
        seeded_subsample(
            labels_l.len(),
            config.llgc_graph_cap,
            derive(config.seed, Purpose::GraphSubsample, iteration as u64),
        )
    } else {
        (0..labels_l.len()).collect()
    };

    let dim = embed_l.ncols();
    let n = anchor_rows.len() + embed_u.nrows();
    let mut stacked = ndarray::Array2::<F>::zeros((n, dim));
    for (row, &src) in anchor_rows.iter().enumerate() {
        stacked.row_mut(row).assign(&embed_l.row(src));
    }
    for (row, src) in embed_u.rows().into_iter().enumerate() {
        stacked.row_mut(anchor_rows.len() + row).assign(&src);
    }
    let anchor_labels: Vec<usize> = anchor_rows.iter().map(|&r| labels_l[r]).collect();

    let w = affinity(&stacked, config.llgc.sigma)?;
    let s = normalize_affinity(&w)?;
    let seeded = seed_label_matrix(&anchor_labels, knn_labels_u, num_classes)?;
    let result = propagate(&s, &seeded, &config.llgc)?;
    if !result.converged {
        log::warn!(
            "label propagation hit the iteration cap ({}); consuming labels anyway",
            result.iterations_used
        );
    }

    let (labels_u, scores_u) = crate::llgc::harden(&result.f, seeded.labeled_count);
    let positions = select_top_by_score(&scores_u, config.selection_percent, basis)?;
    let labels: Vec<usize> = positions.iter().map(|&pos| labels_u[pos]).collect();
    Ok((positions, labels))
}

/// Train once on the ground-truth labeled set and evaluate: the lower
/// anchor for the self-training comparisons. An all-labels upper anchor is
/// the same call with a split whose labeled set is the whole training set.
pub fn supervised_baseline<F: Scalar>(
    train: &Dataset,
    split: &Split,
    mut model: EmbeddingModel<F>,
    epochs: usize,
    config: &SelfTrainConfig,
    sink: RecordSink,
) -> Result<RunReport> {
    config.validate()?;
    let state = MetaState::from_split(train, split)?;
    let started = Instant::now();

    let mean_loss = train_embedding(
        &mut model,
        train,
        &state.labeled_idx,
        &state.labeled_labels,
        epochs,
        config.batch_size,
        config.margin,
        config.adam,
        derive(config.seed, Purpose::Shuffle, 1),
    )?;
    let test_error = evaluate(
        &model,
        train,
        &state.labeled_idx,
        &state.labeled_labels,
        &split.test,
        config.eval_subset,
        config.seed,
    )?;

    let record = IterationRecord {
        iteration: 1,
        labeled_size: state.labeled_idx.len(),
        pool_size: state.unlabeled_idx.len(),
        selected: 0,
        mean_triplet_loss: mean_loss,
        pseudo_correct: None,
        pseudo_total: 0,
        test_error_pct: test_error,
        seconds: started.elapsed().as_secs_f64(),
    };
    sink(&record);
    Ok(RunReport {
        records: vec![record],
        final_test_error_pct: test_error,
    })
}

/// Dispatch on the configured variant.
pub fn run_variant<F: Scalar>(
    train: &Dataset,
    split: &Split,
    model: EmbeddingModel<F>,
    config: &SelfTrainConfig,
    sink: RecordSink,
) -> Result<RunReport> {
    run_variant_with_model(train, split, model, config, sink).map(|(r, _)| r)
}

/// As [`run_variant`], additionally returning the trained model (for
/// checkpointing and scatter emission).
pub fn run_variant_with_model<F: Scalar>(
    train: &Dataset,
    split: &Split,
    model: EmbeddingModel<F>,
    config: &SelfTrainConfig,
    sink: RecordSink,
) -> Result<(RunReport, EmbeddingModel<F>)> {
    run_meta_loop(train, split, model, config, config.variant, sink)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::make_blobs;
    use crate::net::{init_named_model, NamedModel};

    fn blob_problem(seed: u64) -> (Dataset, Split) {
        let centers = vec![vec![0.0, 0.0], vec![4.0, 0.0], vec![2.0, 3.5]];
        let train = make_blobs(20, &centers, 0.8, seed).unwrap();
        let test = make_blobs(10, &centers, 0.8, derive(seed, Purpose::SyntheticTest, 0)).unwrap();
        let split = crate::data::split_balanced(&train, test, 9, seed).unwrap();
        (train, split)
    }

    fn quick_config(variant: Variant, seed: u64) -> SelfTrainConfig {
        SelfTrainConfig {
            variant,
            meta_iterations: 3,
            selection_percent: 30.0,
            epochs_per_iter: 20,
            batch_size: 16,
            margin: 0.3,
            llgc: LlgcConfig {
                alpha: 0.95,
                sigma: 0.5,
                tolerance: 1e-8,
                max_iterations: 5000,
            },
            selection_basis: SelectionBasis::Current,
            warm_start: true,
            adam: AdamConfig::default(),
            llgc_graph_cap: 500,
            eval_subset: 0,
            seed,
        }
    }

    #[test]
    fn zero_epochs_leave_model_unchanged() {
        let (train, split) = blob_problem(1);
        let mut model = init_named_model::<f64>(NamedModel::Mlp, &[2], 3).unwrap();
        let before = model.clone();
        let labels = train.labels_at(&split.labeled_idx).unwrap();
        train_embedding(
            &mut model,
            &train,
            &split.labeled_idx,
            &labels,
            0,
            16,
            0.3,
            AdamConfig::default(),
            1,
        )
        .unwrap();
        for (a, b) in model.params().iter().zip(before.params().iter()) {
            if let (Some(a), Some(b)) = (a, b) {
                assert_eq!(a.weights, b.weights);
            }
        }
    }

    #[test]
    fn training_reduces_triplet_loss_on_separable_blobs() {
        let (train, split) = blob_problem(7);
        let labels = train.labels_at(&split.labeled_idx).unwrap();
        let mut model = init_named_model::<f64>(NamedModel::Mlp, &[2], 11).unwrap();

        let batch = train.batch::<f64>(&split.labeled_idx).unwrap();
        let cfg = TripletLossConfig::new(0.3).unwrap();
        let triplets = mine_all_valid(&labels);
        let initial = triplet_loss(&model.forward(&batch).unwrap(), &triplets, cfg)
            .unwrap()
            .0;

        train_embedding(
            &mut model,
            &train,
            &split.labeled_idx,
            &labels,
            50,
            16,
            0.3,
            AdamConfig::default(),
            5,
        )
        .unwrap();
        let trained = triplet_loss(&model.forward(&batch).unwrap(), &triplets, cfg)
            .unwrap()
            .0;
        assert!(
            trained < initial,
            "loss did not drop: {initial} -> {trained}"
        );
    }

    #[test]
    fn training_is_deterministic() {
        let (train, split) = blob_problem(3);
        let labels = train.labels_at(&split.labeled_idx).unwrap();
        let run = || {
            let mut model = init_named_model::<f32>(NamedModel::Mlp, &[2], 21).unwrap();
            train_embedding(
                &mut model,
                &train,
                &split.labeled_idx,
                &labels,
                10,
                8,
                0.3,
                AdamConfig::default(),
                17,
            )
            .unwrap();
            model
        };
        let a = run();
        let b = run();
        for (pa, pb) in a.params().iter().zip(b.params().iter()) {
            if let (Some(pa), Some(pb)) = (pa, pb) {
                assert_eq!(pa.weights, pb.weights);
                assert_eq!(pa.bias, pb.bias);
            }
        }
    }

    #[test]
    fn single_class_labeled_set_is_training_error() {
        let (train, _) = blob_problem(9);
        let mut model = init_named_model::<f64>(NamedModel::Mlp, &[2], 0).unwrap();
        let err = train_embedding(
            &mut model,
            &train,
            &[0, 1, 2],
            &[0, 0, 0],
            5,
            8,
            0.3,
            AdamConfig::default(),
            0,
        );
        assert!(matches!(err, Err(Error::Training(_))));
    }

    #[test]
    fn full_selection_in_one_pass_consumes_pool() {
        let (train, split) = blob_problem(13);
        let model = init_named_model::<f64>(NamedModel::Mlp, &[2], 5).unwrap();
        let mut config = quick_config(Variant::Siamese, 13);
        config.meta_iterations = 1;
        config.selection_percent = 100.0;
        config.epochs_per_iter = 5;
        let report =
            siamese_self_train(&train, &split, model, &config, &mut |_| {}).unwrap();
        let record = &report.records[0];
        assert_eq!(record.pool_size, 0);
        assert_eq!(record.labeled_size, train.len());
        assert_eq!(record.selected, train.len() - split.labeled_idx.len());
    }

    #[test]
    fn labeled_sizes_grow_by_ceil_formula_until_exhaustion() {
        let (train, split) = blob_problem(17);
        let model = init_named_model::<f64>(NamedModel::Mlp, &[2], 2).unwrap();
        let mut config = quick_config(Variant::Siamese, 17);
        config.meta_iterations = 6;
        config.selection_percent = 40.0;
        config.epochs_per_iter = 3;
        let report =
            siamese_self_train(&train, &split, model, &config, &mut |_| {}).unwrap();

        let mut labeled = split.labeled_idx.len();
        let mut pool = split.unlabeled_idx.len();
        for record in &report.records {
            let expect = if pool == 0 {
                0
            } else {
                (((config.selection_percent / 100.0) * pool as f64).ceil() as usize).min(pool)
            };
            labeled += expect;
            pool -= expect;
            assert_eq!(record.labeled_size, labeled);
            assert_eq!(record.pool_size, pool);
            if record.pool_size > 0 || expect > 0 {
                assert_eq!(record.selected, expect);
            }
        }
    }

    #[test]
    fn pool_exhaustion_keeps_running_with_log_only() {
        let (train, split) = blob_problem(23);
        let model = init_named_model::<f64>(NamedModel::Mlp, &[2], 8).unwrap();
        let mut config = quick_config(Variant::Siamese, 23);
        config.meta_iterations = 3;
        config.selection_percent = 100.0;
        config.epochs_per_iter = 2;
        let report =
            siamese_self_train(&train, &split, model, &config, &mut |_| {}).unwrap();
        assert_eq!(report.records.len(), 3);
        assert_eq!(report.records[0].pool_size, 0);
        assert_eq!(report.records[2].selected, 0);
        assert_eq!(report.records[2].labeled_size, train.len());
    }

    #[test]
    fn run_is_deterministic_end_to_end() {
        let (train, split) = blob_problem(29);
        let config = quick_config(Variant::Siamese, 29);
        let run = || {
            let model = init_named_model::<f32>(NamedModel::Mlp, &[2], derive(29, Purpose::ModelInit, 0)).unwrap();
            siamese_self_train(&train, &split, model, &config, &mut |_| {}).unwrap()
        };
        let a = run();
        let b = run();
        assert_eq!(a.records.len(), b.records.len());
        for (ra, rb) in a.records.iter().zip(b.records.iter()) {
            assert_eq!(ra.labeled_size, rb.labeled_size);
            assert_eq!(ra.test_error_pct, rb.test_error_pct);
            assert_eq!(ra.mean_triplet_loss, rb.mean_triplet_loss);
            assert_eq!(ra.pseudo_correct, rb.pseudo_correct);
        }
    }

    #[test]
    fn pseudo_labels_never_overwrite_ground_truth() {
        let (train, split) = blob_problem(31);
        let model = init_named_model::<f64>(NamedModel::Mlp, &[2], 4).unwrap();
        let mut config = quick_config(Variant::Siamese, 31);
        config.meta_iterations = 4;
        let mut state_sizes = Vec::new();
        let report = siamese_self_train(&train, &split, model, &config, &mut |r| {
            state_sizes.push(r.labeled_size);
        })
        .unwrap();
        // Sizes strictly increase while the pool is non-empty.
        for pair in report.records.windows(2) {
            if pair[0].pool_size > 0 {
                assert!(pair[1].labeled_size > pair[0].labeled_size);
            }
        }
        assert_eq!(state_sizes.len(), report.records.len());
    }

    #[test]
    fn llgc_variant_runs_and_reports() {
        let (train, split) = blob_problem(37);
        let model = init_named_model::<f64>(NamedModel::Mlp, &[2], 6).unwrap();
        let config = quick_config(Variant::Llgc, 37);
        let report = llgc_self_train(&train, &split, model, &config, &mut |_| {}).unwrap();
        assert_eq!(report.records.len(), 3);
        assert!(report.final_test_error_pct.is_finite());
    }

    #[test]
    fn llgc_alpha_zero_reduces_to_seeded_labels() {
        // With alpha = 0 propagation returns Y: scores are all 1, selection
        // degenerates to the positional prefix, labels equal the 1-NN seeds.
        let (train, split) = blob_problem(41);
        let mut config = quick_config(Variant::Llgc, 41);
        config.llgc.alpha = 0.0;
        config.meta_iterations = 1;
        config.epochs_per_iter = 3;

        let model = init_named_model::<f64>(NamedModel::Mlp, &[2], 12).unwrap();
        let llgc_report =
            llgc_self_train(&train, &split, model, &config, &mut |_| {}).unwrap();
        assert_eq!(llgc_report.records.len(), 1);
        assert!(llgc_report.records[0].selected > 0);
    }

    #[test]
    fn evaluate_on_reference_itself_is_zero_error() {
        let (train, split) = blob_problem(43);
        let model = init_named_model::<f64>(NamedModel::Mlp, &[2], 1).unwrap();
        let labels = train.labels_at(&split.labeled_idx).unwrap();
        // Test set equal to the reference rows: every query matches itself
        // at distance zero.
        let reference_ds = {
            let batch: Vec<usize> = split.labeled_idx.clone();
            let feats = match train.features() {
                crate::data::Features::Flat(a) => {
                    let mut sub = ndarray::Array2::zeros((batch.len(), a.ncols()));
                    for (r, &i) in batch.iter().enumerate() {
                        sub.row_mut(r).assign(&a.row(i));
                    }
                    crate::data::Features::Flat(sub)
                }
                _ => unreachable!(),
            };
            Dataset::new(feats, Some(labels.clone()), train.num_classes()).unwrap()
        };
        let err = evaluate(&model, &train, &split.labeled_idx, &labels, &reference_ds, 0, 0).unwrap();
        assert_eq!(err, 0.0);
    }

    #[test]
    fn single_reference_point_is_a_constant_classifier() {
        let (train, split) = blob_problem(47);
        let model = init_named_model::<f64>(NamedModel::Mlp, &[2], 2).unwrap();
        let labels = train.labels_at(&split.labeled_idx).unwrap();
        let err = evaluate(
            &model,
            &train,
            &split.labeled_idx[..1],
            &labels[..1],
            &split.test,
            0,
            0,
        )
        .unwrap();
        let test_labels = split.test.labels().unwrap();
        let share_other = test_labels.iter().filter(|&&y| y != labels[0]).count() as f64
            / test_labels.len() as f64;
        assert!((err - 100.0 * share_other).abs() < 1e-9);
    }

    #[test]
    fn baseline_is_single_phase() {
        let (train, split) = blob_problem(53);
        let model = init_named_model::<f64>(NamedModel::Mlp, &[2], 3).unwrap();
        let config = quick_config(Variant::Siamese, 53);
        let report =
            supervised_baseline(&train, &split, model, 10, &config, &mut |_| {}).unwrap();
        assert_eq!(report.records.len(), 1);
        assert_eq!(report.records[0].selected, 0);
        assert_eq!(report.records[0].labeled_size, split.labeled_idx.len());
    }
}
