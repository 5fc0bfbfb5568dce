//! Config-driven experiment execution: datasets, per-seed jobs, report
//! CSVs, the run manifest and the cross-seed summary.
//!
//! Artifact layout under the output directory:
//!
//! ```text
//! manifest.txt            canonical config; re-runnable
//! summary.csv             per-arm mean and sample std of final test error
//! seed_<s>/supervised.csv one row per training phase
//! seed_<s>/selftrain.csv  one row per meta-iteration
//! seed_<s>/timings.csv    wall time per iteration (not deterministic)
//! seed_<s>/checkpoint.bin final self-trained model
//! seed_<s>/scatter.{csv,svg}  optional, 2-D models only
//! ```
//!
//! All report CSVs are deterministic functions of the manifest: timings go
//! to a separate file so identical re-runs stay byte-identical.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::config::{DatasetConfig, Precision, RunConfig};
use crate::data::{load_idx, make_blobs, make_glyph_digits, split_balanced, Dataset, Split};
use crate::net::{init_named_model, save_checkpoint, EmbeddingModel, Scalar};
use crate::seeds::{derive, Purpose};
use crate::selftrain::{
    run_variant, supervised_baseline, IterationRecord, RunReport, Variant,
};
use crate::{Error, Result};

/// Environment variable naming the default root for relative output dirs.
pub const OUTPUT_ROOT_ENV: &str = "TRIPLET_SSL_OUT";

/// Final per-arm aggregate, mirroring a mean-and-deviation results table.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub arm: String,
    pub n_seeds: usize,
    pub mean_test_error_pct: f64,
    pub std_test_error_pct: f64,
}

fn sample_stats(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let std = if n > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    (mean, std)
}

/// Build the train and test datasets named by the config. Synthetic test
/// sets come from an independent seed stream.
pub fn build_datasets(config: &RunConfig) -> Result<(Dataset, Dataset)> {
    match &config.dataset {
        DatasetConfig::Idx {
            train_images,
            train_labels,
            test_images,
            test_labels,
        } => {
            let train = load_idx(train_images, train_labels)?;
            let test = load_idx(test_images, test_labels)?;
            if train.example_shape() != test.example_shape() {
                return Err(Error::Consistency(
                    "train and test example shapes differ".into(),
                ));
            }
            Ok((train, test))
        }
        DatasetConfig::Blobs {
            n_per_class,
            test_per_class,
            centers,
            stddev,
            seed,
        } => {
            let train = make_blobs(*n_per_class, centers, *stddev, *seed)?;
            let test = make_blobs(
                *test_per_class,
                centers,
                *stddev,
                derive(*seed, Purpose::SyntheticTest, 0),
            )?;
            Ok((train, test))
        }
        DatasetConfig::Glyphs {
            n_per_class,
            test_per_class,
            side,
            jitter,
            noise,
            seed,
        } => {
            let train = make_glyph_digits(*n_per_class, *side, *jitter, *noise, *seed)?;
            let test = make_glyph_digits(
                *test_per_class,
                *side,
                *jitter,
                *noise,
                derive(*seed, Purpose::SyntheticTest, 0),
            )?;
            Ok((train, test))
        }
    }
}

/// Resolve the output directory: absolute paths stand, relative paths are
/// joined under `TRIPLET_SSL_OUT` when set (the working directory
/// otherwise).
pub fn resolve_output_dir(config: &RunConfig) -> PathBuf {
    if config.output_dir.is_absolute() {
        config.output_dir.clone()
    } else {
        match std::env::var_os(OUTPUT_ROOT_ENV) {
            Some(root) => PathBuf::from(root).join(&config.output_dir),
            None => config.output_dir.clone(),
        }
    }
}

fn fmt6(v: f64) -> String {
    format!("{v:.6}")
}

/// CSV sink that flushes one row per completed iteration.
struct CsvSink {
    report: fs::File,
    timings: fs::File,
}

const REPORT_HEADER: &str = "iteration,labeled_size,pool_size,selected,mean_triplet_loss,pseudo_correct,pseudo_total,pseudo_accuracy,test_error_pct\n";

impl CsvSink {
    fn create(report_path: &Path, timings_path: &Path) -> Result<Self> {
        let mut report = fs::File::create(report_path)?;
        report.write_all(REPORT_HEADER.as_bytes())?;
        let mut timings = fs::File::create(timings_path)?;
        timings.write_all(b"iteration,seconds\n")?;
        Ok(CsvSink { report, timings })
    }

    fn record(&mut self, r: &IterationRecord) {
        let pseudo_correct = r
            .pseudo_correct
            .map(|c| c.to_string())
            .unwrap_or_default();
        let pseudo_accuracy = r
            .pseudo_accuracy()
            .filter(|a| a.is_finite())
            .map(fmt6)
            .unwrap_or_default();
        let line = format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.iteration,
            r.labeled_size,
            r.pool_size,
            r.selected,
            fmt6(r.mean_triplet_loss),
            pseudo_correct,
            r.pseudo_total,
            pseudo_accuracy,
            fmt6(r.test_error_pct),
        );
        let _ = self.report.write_all(line.as_bytes());
        let _ = self.report.flush();
        let _ = self
            .timings
            .write_all(format!("{},{:.3}\n", r.iteration, r.seconds).as_bytes());
        let _ = self.timings.flush();
    }
}

struct SeedOutcome {
    seed: u64,
    supervised_final: Option<f64>,
    selftrain_final: Option<f64>,
}

fn all_labels_split(train: &Dataset, test: Dataset) -> Split {
    Split {
        labeled_idx: (0..train.len()).collect(),
        unlabeled_idx: Vec::new(),
        test,
    }
}

fn seed_job<F: Scalar>(
    config: &RunConfig,
    train: &Dataset,
    test: &Dataset,
    seed: u64,
    dir: &Path,
    with_selftrain: bool,
) -> Result<SeedOutcome> {
    fs::create_dir_all(dir)?;
    let split = if config.baseline_all_labels && !with_selftrain {
        all_labels_split(train, test.clone())
    } else {
        split_balanced(train, test.clone(), config.n_labeled, derive(seed, Purpose::Split, 0))?
    };
    let model: EmbeddingModel<F> = init_named_model(
        config.model,
        &train.example_shape(),
        derive(seed, Purpose::ModelInit, 0),
    )?;
    let st_config = config.selftrain_config(seed);

    let mut sink = CsvSink::create(&dir.join("supervised.csv"), &dir.join("timings.csv"))?;
    let baseline_report = supervised_baseline(
        train,
        &split,
        model.clone(),
        config.effective_baseline_epochs(),
        &st_config,
        &mut |r| sink.record(r),
    )?;
    let supervised_final = Some(baseline_report.final_test_error_pct);

    let mut selftrain_final = None;
    if with_selftrain {
        let mut sink =
            CsvSink::create(&dir.join("selftrain.csv"), &dir.join("timings_selftrain.csv"))?;
        let (report, trained) =
            crate::selftrain::run_variant_with_model(train, &split, model, &st_config, &mut |r| {
                sink.record(r)
            })?;
        selftrain_final = Some(report.final_test_error_pct);
        save_checkpoint(&trained, &dir.join("checkpoint.bin"))?;
        if config.scatter && trained.embedding_dim() == 2 {
            crate::scatter::emit_scatter(
                &trained,
                test,
                &dir.join("scatter.csv"),
                &dir.join("scatter.svg"),
            )?;
        }
    }

    Ok(SeedOutcome {
        seed,
        supervised_final,
        selftrain_final,
    })
}

fn write_summary(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(b"arm,n_seeds,mean_test_error_pct,std_test_error_pct\n")?;
    for row in rows {
        f.write_all(
            format!(
                "{},{},{},{}\n",
                row.arm,
                row.n_seeds,
                fmt6(row.mean_test_error_pct),
                fmt6(row.std_test_error_pct)
            )
            .as_bytes(),
        )?;
    }
    Ok(())
}

fn write_manifest(path: &Path, config: &RunConfig) -> Result<()> {
    let mut text = String::new();
    text.push_str(&format!(
        "# {} {} run manifest; re-run with `triplet-ssl run {}`\n",
        env!("CARGO_PKG_NAME"),
        env!("CARGO_PKG_VERSION"),
        path.display()
    ));
    text.push_str(&config.to_canonical_string());
    fs::write(path, text)?;
    Ok(())
}

fn variant_name(variant: Variant) -> &'static str {
    match variant {
        Variant::Siamese => "siamese",
        Variant::Llgc => "llgc",
    }
}

fn execute(config: &RunConfig, parallel_seeds: usize, with_selftrain: bool) -> Result<Vec<SummaryRow>> {
    let out_dir = resolve_output_dir(config);
    fs::create_dir_all(&out_dir)?;
    write_manifest(&out_dir.join("manifest.txt"), config)?;
    let (train, test) = build_datasets(config)?;

    let jobs: Vec<u64> = config.seeds.clone();
    let mut outcomes: Vec<SeedOutcome> = Vec::with_capacity(jobs.len());
    let workers = parallel_seeds.max(1);

    let run_one = |seed: u64| -> Result<SeedOutcome> {
        let dir = out_dir.join(format!("seed_{seed}"));
        match config.precision {
            Precision::F32 => seed_job::<f32>(config, &train, &test, seed, &dir, with_selftrain),
            Precision::F64 => seed_job::<f64>(config, &train, &test, seed, &dir, with_selftrain),
        }
    };

    if workers == 1 {
        for &seed in &jobs {
            outcomes.push(run_one(seed)?);
        }
    } else {
        for chunk in jobs.chunks(workers) {
            let results: Vec<Result<SeedOutcome>> = std::thread::scope(|scope| {
                let handles: Vec<_> = chunk
                    .iter()
                    .map(|&seed| scope.spawn(move || run_one(seed)))
                    .collect();
                handles
                    .into_iter()
                    .map(|h| h.join().expect("seed job panicked"))
                    .collect()
            });
            for r in results {
                outcomes.push(r?);
            }
        }
    }
    outcomes.sort_by_key(|o| {
        jobs.iter()
            .position(|&s| s == o.seed)
            .unwrap_or(usize::MAX)
    });

    let mut rows = Vec::new();
    let supervised: Vec<f64> = outcomes.iter().filter_map(|o| o.supervised_final).collect();
    if !supervised.is_empty() {
        let (mean, std) = sample_stats(&supervised);
        rows.push(SummaryRow {
            arm: "supervised".into(),
            n_seeds: supervised.len(),
            mean_test_error_pct: mean,
            std_test_error_pct: std,
        });
    }
    let selftrain: Vec<f64> = outcomes.iter().filter_map(|o| o.selftrain_final).collect();
    if !selftrain.is_empty() {
        let (mean, std) = sample_stats(&selftrain);
        rows.push(SummaryRow {
            arm: variant_name(config.variant).into(),
            n_seeds: selftrain.len(),
            mean_test_error_pct: mean,
            std_test_error_pct: std,
        });
    }
    write_summary(&out_dir.join("summary.csv"), &rows)?;
    Ok(rows)
}

/// Execute the full experiment: supervised baseline plus the configured
/// self-training variant for every seed, then the summary.
pub fn run(config: &RunConfig, parallel_seeds: usize) -> Result<Vec<SummaryRow>> {
    execute(config, parallel_seeds, true)
}

/// Execute only the supervised baseline (optionally on all labels).
pub fn run_baseline(config: &RunConfig, parallel_seeds: usize) -> Result<Vec<SummaryRow>> {
    execute(config, parallel_seeds, false)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sample_stats_match_hand_computation() {
        // mean of (2, 4, 9) = 5; sample variance = (9 + 1 + 16) / 2 = 13.
        let (mean, std) = sample_stats(&[2.0, 4.0, 9.0]);
        assert!((mean - 5.0).abs() < 1e-12);
        assert!((std - 13.0f64.sqrt()).abs() < 1e-12);

        let (mean, std) = sample_stats(&[7.5]);
        assert_eq!(mean, 7.5);
        assert_eq!(std, 0.0);
    }
}
