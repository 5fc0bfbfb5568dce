//! Run configuration: a flat `section.key = value` text format.
//!
//! Configurations are diffable experiment artifacts: comments and blank
//! lines are allowed, keys are validated strictly (unknown keys are
//! errors), and every parse failure carries its line number. The canonical
//! serialization doubles as the run manifest, which can itself be re-run.

use std::collections::BTreeMap;
use std::path::PathBuf;

use crate::embedknn::SelectionBasis;
use crate::llgc::LlgcConfig;
use crate::net::{AdamConfig, NamedModel};
use crate::selftrain::{SelfTrainConfig, Variant};
use crate::{Error, Result};

/// Numeric precision of network parameters and activations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

impl std::str::FromStr for Precision {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f32" => Ok(Precision::F32),
            "f64" => Ok(Precision::F64),
            other => Err(Error::Config(format!(
                "unknown precision {other:?}; expected f32 or f64"
            ))),
        }
    }
}

impl Precision {
    pub fn as_str(&self) -> &'static str {
        match self {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        }
    }
}

/// Where the train/test data comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum DatasetConfig {
    /// IDX image/label file pairs.
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
    },
    /// Gaussian clusters with flat features.
    Blobs {
        n_per_class: usize,
        test_per_class: usize,
        centers: Vec<Vec<f64>>,
        stddev: f64,
        seed: u64,
    },
    /// Synthetic digit glyph images.
    Glyphs {
        n_per_class: usize,
        test_per_class: usize,
        side: usize,
        jitter: f64,
        noise: f64,
        seed: u64,
    },
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub dataset: DatasetConfig,
    pub n_labeled: usize,
    pub model: NamedModel,
    pub precision: Precision,
    pub variant: Variant,
    pub meta_iterations: usize,
    pub selection_percent: f64,
    pub epochs_per_iter: usize,
    pub batch_size: usize,
    pub margin: f64,
    pub selection_basis: SelectionBasis,
    pub warm_start: bool,
    pub adam: AdamConfig,
    pub eval_subset: usize,
    pub llgc: LlgcConfig,
    pub llgc_graph_cap: usize,
    /// 0 means meta_iterations * epochs_per_iter (budget parity with the
    /// self-training arm).
    pub baseline_epochs: usize,
    pub baseline_all_labels: bool,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    pub scatter: bool,
}

impl RunConfig {
    /// Self-training parameters for one run seed.
    pub fn selftrain_config(&self, seed: u64) -> SelfTrainConfig {
        SelfTrainConfig {
            variant: self.variant,
            meta_iterations: self.meta_iterations,
            selection_percent: self.selection_percent,
            epochs_per_iter: self.epochs_per_iter,
            batch_size: self.batch_size,
            margin: self.margin,
            llgc: self.llgc,
            selection_basis: self.selection_basis,
            warm_start: self.warm_start,
            adam: self.adam,
            llgc_graph_cap: self.llgc_graph_cap,
            eval_subset: self.eval_subset,
            seed,
        }
    }

    pub fn effective_baseline_epochs(&self) -> usize {
        if self.baseline_epochs == 0 {
            self.meta_iterations * self.epochs_per_iter
        } else {
            self.baseline_epochs
        }
    }

    /// Canonical key/value form: parseable by [`parse_config_str`] and
    /// stable, so it serves as the run manifest.
    pub fn to_canonical_string(&self) -> String {
        let mut out = String::new();
        match &self.dataset {
            DatasetConfig::Idx {
                train_images,
                train_labels,
                test_images,
                test_labels,
            } => {
                out.push_str("dataset.kind = idx\n");
                out.push_str(&format!("dataset.train_images = {}\n", train_images.display()));
                out.push_str(&format!("dataset.train_labels = {}\n", train_labels.display()));
                out.push_str(&format!("dataset.test_images = {}\n", test_images.display()));
                out.push_str(&format!("dataset.test_labels = {}\n", test_labels.display()));
            }
            DatasetConfig::Blobs {
                n_per_class,
                test_per_class,
                centers,
                stddev,
                seed,
            } => {
                out.push_str("dataset.kind = blobs\n");
                out.push_str(&format!("dataset.n_per_class = {n_per_class}\n"));
                out.push_str(&format!("dataset.test_per_class = {test_per_class}\n"));
                let centers_str: Vec<String> = centers
                    .iter()
                    .map(|c| {
                        c.iter()
                            .map(|v| format!("{v}"))
                            .collect::<Vec<_>>()
                            .join(" ")
                    })
                    .collect();
                out.push_str(&format!("dataset.centers = {}\n", centers_str.join("; ")));
                out.push_str(&format!("dataset.stddev = {stddev}\n"));
                out.push_str(&format!("dataset.seed = {seed}\n"));
            }
            DatasetConfig::Glyphs {
                n_per_class,
                test_per_class,
                side,
                jitter,
                noise,
                seed,
            } => {
                out.push_str("dataset.kind = glyphs\n");
                out.push_str(&format!("dataset.n_per_class = {n_per_class}\n"));
                out.push_str(&format!("dataset.test_per_class = {test_per_class}\n"));
                out.push_str(&format!("dataset.side = {side}\n"));
                out.push_str(&format!("dataset.jitter = {jitter}\n"));
                out.push_str(&format!("dataset.noise = {noise}\n"));
                out.push_str(&format!("dataset.seed = {seed}\n"));
            }
        }
        out.push_str(&format!("data.n_labeled = {}\n", self.n_labeled));
        out.push_str(&format!("model.name = {}\n", self.model.as_str()));
        out.push_str(&format!("model.precision = {}\n", self.precision.as_str()));
        out.push_str(&format!(
            "train.variant = {}\n",
            match self.variant {
                Variant::Siamese => "siamese",
                Variant::Llgc => "llgc",
            }
        ));
        out.push_str(&format!("train.meta_iterations = {}\n", self.meta_iterations));
        out.push_str(&format!("train.selection_percent = {}\n", self.selection_percent));
        out.push_str(&format!("train.epochs_per_iter = {}\n", self.epochs_per_iter));
        out.push_str(&format!("train.batch_size = {}\n", self.batch_size));
        out.push_str(&format!("train.margin = {}\n", self.margin));
        out.push_str(&format!(
            "train.selection_basis = {}\n",
            match self.selection_basis {
                SelectionBasis::Current => "current",
                SelectionBasis::Initial => "initial",
            }
        ));
        out.push_str(&format!("train.warm_start = {}\n", self.warm_start));
        out.push_str(&format!("train.learning_rate = {}\n", self.adam.learning_rate));
        out.push_str(&format!("train.beta1 = {}\n", self.adam.beta1));
        out.push_str(&format!("train.beta2 = {}\n", self.adam.beta2));
        out.push_str(&format!("train.epsilon = {}\n", self.adam.epsilon));
        out.push_str(&format!("train.eval_subset = {}\n", self.eval_subset));
        out.push_str(&format!("llgc.alpha = {}\n", self.llgc.alpha));
        out.push_str(&format!("llgc.sigma = {}\n", self.llgc.sigma));
        out.push_str(&format!("llgc.tolerance = {}\n", self.llgc.tolerance));
        out.push_str(&format!("llgc.max_iterations = {}\n", self.llgc.max_iterations));
        out.push_str(&format!("llgc.graph_cap = {}\n", self.llgc_graph_cap));
        out.push_str(&format!("baseline.epochs = {}\n", self.baseline_epochs));
        out.push_str(&format!("baseline.all_labels = {}\n", self.baseline_all_labels));
        let seeds: Vec<String> = self.seeds.iter().map(|s| s.to_string()).collect();
        out.push_str(&format!("run.seeds = {}\n", seeds.join(",")));
        out.push_str(&format!("run.output_dir = {}\n", self.output_dir.display()));
        out.push_str(&format!("run.scatter = {}\n", self.scatter));
        out
    }
}

struct RawConfig {
    entries: BTreeMap<String, (String, usize)>,
}

impl RawConfig {
    fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (lineno, raw_line) in text.lines().enumerate() {
            let line = raw_line.trim();
            let lineno = lineno + 1;
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {lineno}: expected `key = value`, got {line:?}"))
            })?;
            let key = key.trim();
            let value = value.trim();
            if key.is_empty() {
                return Err(Error::Config(format!("line {lineno}: empty key")));
            }
            if !key
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.')
            {
                return Err(Error::Config(format!(
                    "line {lineno}: key {key:?} contains invalid characters"
                )));
            }
            if entries.insert(key.to_string(), (value.to_string(), lineno)).is_some() {
                return Err(Error::Config(format!(
                    "line {lineno}: duplicate key {key:?}"
                )));
            }
        }
        Ok(RawConfig { entries })
    }

    fn set_override(&mut self, key: &str, value: &str) {
        self.entries.insert(key.to_string(), (value.to_string(), 0));
    }
}

struct Extract {
    entries: BTreeMap<String, (String, usize)>,
    consumed: std::collections::BTreeSet<String>,
}

impl Extract {
    fn where_is(&self, key: &str) -> String {
        match self.entries.get(key) {
            Some((_, 0)) => format!("override {key}"),
            Some((_, line)) => format!("line {line} ({key})"),
            None => key.to_string(),
        }
    }

    fn raw(&mut self, key: &str) -> Option<String> {
        self.consumed.insert(key.to_string());
        self.entries.get(key).map(|(v, _)| v.clone())
    }

    fn required(&mut self, key: &str) -> Result<String> {
        self.raw(key)
            .ok_or_else(|| Error::Config(format!("missing required key {key}")))
    }

    fn parse<T: std::str::FromStr>(&mut self, key: &str, default: T) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        match self.raw(key) {
            None => Ok(default),
            Some(v) => v.parse::<T>().map_err(|e| {
                Error::Config(format!("{}: bad value {v:?}: {e}", self.where_is(key)))
            }),
        }
    }

    fn parse_required<T: std::str::FromStr>(&mut self, key: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        let v = self.required(key)?;
        v.parse::<T>()
            .map_err(|e| Error::Config(format!("{}: bad value {v:?}: {e}", self.where_is(key))))
    }

    fn leftovers(&self) -> Result<()> {
        for (key, (_, line)) in &self.entries {
            if !self.consumed.contains(key) {
                return Err(Error::Config(if *line == 0 {
                    format!("override: unknown key {key:?}")
                } else {
                    format!("line {line}: unknown key {key:?}")
                }));
            }
        }
        Ok(())
    }
}

fn parse_centers(text: &str, location: &str) -> Result<Vec<Vec<f64>>> {
    let mut centers = Vec::new();
    for group in text.split(';') {
        let coords: Vec<f64> = group
            .split_whitespace()
            .map(|t| {
                t.parse::<f64>().map_err(|_| {
                    Error::Config(format!("{location}: bad center coordinate {t:?}"))
                })
            })
            .collect::<Result<_>>()?;
        if coords.is_empty() {
            return Err(Error::Config(format!("{location}: empty center")));
        }
        centers.push(coords);
    }
    if centers.len() < 2 {
        return Err(Error::Config(format!(
            "{location}: need at least 2 centers"
        )));
    }
    Ok(centers)
}

fn parse_seed_list(text: &str, location: &str) -> Result<Vec<u64>> {
    let seeds: Vec<u64> = text
        .split(',')
        .map(|t| {
            t.trim()
                .parse::<u64>()
                .map_err(|_| Error::Config(format!("{location}: bad seed {t:?}")))
        })
        .collect::<Result<_>>()?;
    if seeds.is_empty() {
        return Err(Error::Config(format!("{location}: empty seed list")));
    }
    Ok(seeds)
}

/// Parse a configuration, applying `key=value` overrides on top of the
/// file contents before validation.
pub fn parse_config_str(text: &str, overrides: &[(String, String)]) -> Result<RunConfig> {
    let mut raw = RawConfig::parse(text)?;
    for (key, value) in overrides {
        raw.set_override(key, value);
    }
    let mut ex = Extract {
        entries: raw.entries,
        consumed: Default::default(),
    };

    let kind = ex.required("dataset.kind")?;
    let dataset = match kind.as_str() {
        "idx" => DatasetConfig::Idx {
            train_images: PathBuf::from(ex.required("dataset.train_images")?),
            train_labels: PathBuf::from(ex.required("dataset.train_labels")?),
            test_images: PathBuf::from(ex.required("dataset.test_images")?),
            test_labels: PathBuf::from(ex.required("dataset.test_labels")?),
        },
        "blobs" => {
            let centers_text = ex.required("dataset.centers")?;
            let loc = ex.where_is("dataset.centers");
            DatasetConfig::Blobs {
                n_per_class: ex.parse_required("dataset.n_per_class")?,
                test_per_class: ex.parse_required("dataset.test_per_class")?,
                centers: parse_centers(&centers_text, &loc)?,
                stddev: ex.parse_required("dataset.stddev")?,
                seed: ex.parse("dataset.seed", 0u64)?,
            }
        }
        "glyphs" => DatasetConfig::Glyphs {
            n_per_class: ex.parse_required("dataset.n_per_class")?,
            test_per_class: ex.parse_required("dataset.test_per_class")?,
            side: ex.parse("dataset.side", 28usize)?,
            jitter: ex.parse("dataset.jitter", 0.8f64)?,
            noise: ex.parse("dataset.noise", 0.1f64)?,
            seed: ex.parse("dataset.seed", 0u64)?,
        },
        other => {
            return Err(Error::Config(format!(
                "{}: unknown dataset kind {other:?}; expected idx, blobs or glyphs",
                ex.where_is("dataset.kind")
            )))
        }
    };

    let model: NamedModel = ex.parse_required("model.name")?;
    let precision: Precision = ex.parse("model.precision", Precision::F32)?;
    let variant: Variant = ex.parse_required("train.variant")?;

    let seeds_text = ex.required("run.seeds")?;
    let seeds = parse_seed_list(&seeds_text, &ex.where_is("run.seeds"))?;

    let alpha = ex.parse("llgc.alpha", 0.99f64)?;
    let sigma = ex.parse("llgc.sigma", 1.0f64)?;
    let tolerance = ex.parse("llgc.tolerance", 1e-6f64)?;
    let max_iterations = ex.parse("llgc.max_iterations", 1000usize)?;
    let llgc = LlgcConfig::new(alpha, sigma, tolerance, max_iterations)
        .map_err(|e| Error::Config(format!("llgc section: {e}")))?;

    let config = RunConfig {
        dataset,
        n_labeled: ex.parse_required("data.n_labeled")?,
        model,
        precision,
        variant,
        meta_iterations: ex.parse("train.meta_iterations", 25usize)?,
        selection_percent: ex.parse("train.selection_percent", 10.0f64)?,
        epochs_per_iter: ex.parse("train.epochs_per_iter", 200usize)?,
        batch_size: ex.parse("train.batch_size", 100usize)?,
        margin: ex.parse("train.margin", 0.3f64)?,
        selection_basis: ex.parse("train.selection_basis", SelectionBasis::Current)?,
        warm_start: ex.parse("train.warm_start", true)?,
        adam: AdamConfig {
            learning_rate: ex.parse("train.learning_rate", 1e-3f64)?,
            beta1: ex.parse("train.beta1", 0.9f64)?,
            beta2: ex.parse("train.beta2", 0.999f64)?,
            epsilon: ex.parse("train.epsilon", 1e-8f64)?,
        },
        eval_subset: ex.parse("train.eval_subset", 0usize)?,
        llgc,
        llgc_graph_cap: ex.parse("llgc.graph_cap", 2000usize)?,
        baseline_epochs: ex.parse("baseline.epochs", 0usize)?,
        baseline_all_labels: ex.parse("baseline.all_labels", false)?,
        seeds,
        output_dir: PathBuf::from(ex.required("run.output_dir")?),
        scatter: ex.parse("run.scatter", false)?,
    };
    ex.leftovers()?;

    config
        .selftrain_config(0)
        .validate()
        .map_err(|e| Error::Config(format!("invalid training section: {e}")))?;
    if config.n_labeled == 0 {
        return Err(Error::Config("data.n_labeled must be positive".into()));
    }
    Ok(config)
}

/// Parse a configuration file.
pub fn parse_config_file(path: &std::path::Path, overrides: &[(String, String)]) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    parse_config_str(&text, overrides)
}
