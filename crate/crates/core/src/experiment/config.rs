//! Experiment configuration, read from TOML.
//!
//! ```toml
//! trials = 10
//! seed = 7
//! methods = ["l2mkl", "l1mkl", "uniform", "best_single"]
//! metrics = ["rmse"]
//! cv_folds = 10
//!
//! [dataset]
//! source = "synthetic"
//! d = 200
//! informative = 10
//! noise = 0.5
//! train = 200
//! test = 200
//!
//! [kernels]
//! recipe = "rank1_features"
//! offset = true
//!
//! [grids]
//! lambda0 = [1e-4, 1e-3, 1e-2, 1e-1, 1.0, 10.0]
//! radius = [0.0, 0.01, 0.1, 1.0, 10.0, 100.0]
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::metrics::Metric;
use crate::data::{DelimitedFormat, LabelColumn, Task};
use crate::error::{Error, Result};
use crate::kernels::KernelSpec;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    L2mkl,
    L1mkl,
    Uniform,
    BestSingle,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::L2mkl => "l2mkl",
            Method::L1mkl => "l1mkl",
            Method::Uniform => "uniform",
            Method::BestSingle => "best_single",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSource {
    /// Fresh train and test draws from the sparse linear signal per trial.
    Synthetic {
        d: usize,
        informative: usize,
        noise: f64,
        train: usize,
        test: usize,
    },
    /// A delimited numeric file, split at random per trial; or, with
    /// `test_path`, a fixed test file and an optional training subsample.
    Delimited {
        path: PathBuf,
        task: Task,
        #[serde(default)]
        label_column: LabelColumn,
        #[serde(default = "default_delimiter")]
        delimiter: char,
        #[serde(default)]
        has_header: bool,
        #[serde(default)]
        label_map: Option<BTreeMap<String, f64>>,
        #[serde(default)]
        test_path: Option<PathBuf>,
        #[serde(default = "default_fraction")]
        train_fraction: f64,
        #[serde(default)]
        train_subsample: Option<usize>,
    },
    /// `label<TAB>text` lines, split like `delimited`.
    Corpus {
        path: PathBuf,
        task: Task,
        #[serde(default)]
        label_map: Option<BTreeMap<String, f64>>,
        #[serde(default)]
        test_path: Option<PathBuf>,
        #[serde(default = "default_fraction")]
        train_fraction: f64,
        #[serde(default)]
        train_subsample: Option<usize>,
    },
}

fn default_fraction() -> f64 {
    0.5
}

fn default_delimiter() -> char {
    ','
}

impl DatasetSource {
    pub fn task(&self) -> Task {
        match self {
            DatasetSource::Synthetic { .. } => Task::Regression,
            DatasetSource::Delimited { task, .. } => *task,
            DatasetSource::Corpus { task, .. } => *task,
        }
    }

    /// Parsing options of a delimited source.
    pub fn delimited_format(&self) -> Option<DelimitedFormat> {
        match self {
            DatasetSource::Delimited {
                task,
                label_column,
                delimiter,
                has_header,
                label_map,
                ..
            } => Some(DelimitedFormat {
                label_column: *label_column,
                delimiter: *delimiter,
                has_header: *has_header,
                task: *task,
                label_map: label_map.clone(),
            }),
            _ => None,
        }
    }

    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        match self {
            DatasetSource::Synthetic { .. } => {}
            DatasetSource::Delimited { path, test_path, .. } | DatasetSource::Corpus { path, test_path, .. } => {
                fix(path);
                if let Some(t) = test_path.as_mut() {
                    fix(t);
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "recipe", rename_all = "snake_case", deny_unknown_fields)]
pub enum KernelRecipe {
    /// The listed kernels on the (optionally standardized) features.
    Explicit {
        specs: Vec<KernelSpec>,
        #[serde(default = "yes")]
        standardize: bool,
    },
    /// One rank-1 kernel per feature column, plus the offset.
    Rank1Features {
        #[serde(default = "yes")]
        offset: bool,
    },
    /// One rank-1 kernel per retained n-gram, plus the offset. Corpus only.
    Ngram {
        #[serde(default = "default_n")]
        n: usize,
        size: usize,
        #[serde(default = "yes")]
        offset: bool,
    },
}

fn yes() -> bool {
    true
}

fn default_n() -> usize {
    2
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grids {
    #[serde(default = "default_lambda0_grid")]
    pub lambda0: Vec<f64>,
    #[serde(default = "default_radius_grid")]
    pub radius: Vec<f64>,
    /// L1 budgets as multiples of the number of base kernels `p`, so `1.0`
    /// matches the total weight of the uniform combination.
    #[serde(default = "default_l1_scale_grid")]
    pub l1_budget_scale: Vec<f64>,
}

pub fn default_lambda0_grid() -> Vec<f64> {
    vec![1e-4, 1e-3, 1e-2, 1e-1, 1.0, 10.0]
}

pub fn default_radius_grid() -> Vec<f64> {
    vec![0.0, 1e-2, 1e-1, 1.0, 10.0, 100.0]
}

pub fn default_l1_scale_grid() -> Vec<f64> {
    vec![0.01, 0.1, 1.0, 10.0]
}

impl Default for Grids {
    fn default() -> Self {
        Grids {
            lambda0: default_lambda0_grid(),
            radius: default_radius_grid(),
            l1_budget_scale: default_l1_scale_grid(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSettings {
    #[serde(default = "default_eta")]
    pub eta: f64,
    #[serde(default)]
    pub epsilon: Option<f64>,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    #[serde(default = "default_l1_tol")]
    pub l1_tol: f64,
    #[serde(default = "default_l1_max_iters")]
    pub l1_max_iters: usize,
}

fn default_eta() -> f64 {
    0.5
}

fn default_max_iters() -> usize {
    200
}

fn default_l1_tol() -> f64 {
    1e-9
}

fn default_l1_max_iters() -> usize {
    5_000
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings {
            eta: default_eta(),
            epsilon: None,
            max_iters: default_max_iters(),
            l1_tol: default_l1_tol(),
            l1_max_iters: default_l1_max_iters(),
        }
    }
}

/// Hyperparameters for the `fit` command.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitSettings {
    #[serde(default = "default_fit_method")]
    pub method: Method,
    pub lambda0: f64,
    #[serde(default)]
    pub radius: f64,
    /// Absolute L1 budget.
    #[serde(default)]
    pub l1_budget: Option<f64>,
    /// Base kernel index for `best_single`.
    #[serde(default)]
    pub kernel_index: Option<usize>,
}

fn default_fit_method() -> Method {
    Method::L2mkl
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub seed: Option<u64>,
    pub methods: Vec<Method>,
    #[serde(default = "default_metrics")]
    pub metrics: Vec<Metric>,
    /// Metric minimized by cross-validation; defaults to the first of
    /// `metrics`.
    #[serde(default)]
    pub selection_metric: Option<Metric>,
    #[serde(default = "default_folds")]
    pub cv_folds: usize,
    pub dataset: DatasetSource,
    pub kernels: KernelRecipe,
    #[serde(default)]
    pub grids: Grids,
    #[serde(default)]
    pub solver: SolverSettings,
    #[serde(default)]
    pub fit: Option<FitSettings>,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

fn default_trials() -> usize {
    1
}

fn default_metrics() -> Vec<Metric> {
    vec![Metric::Rmse]
}

fn default_folds() -> usize {
    10
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    /// Reads a config file; relative dataset paths resolve against its
    /// directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        config.dataset.resolve(base);
        Ok(config)
    }

    pub fn selection(&self) -> Metric {
        self.selection_metric.unwrap_or(self.metrics[0])
    }

    /// The master seed, defaulting to 0 for single-trial runs.
    pub fn master_seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.trials == 0 {
            return bad("trials must be at least 1".into());
        }
        if self.trials > 1 && self.seed.is_none() {
            return bad("a seed is required when trials > 1".into());
        }
        if self.methods.is_empty() {
            return bad("no methods selected".into());
        }
        if self.metrics.is_empty() {
            return bad("no metrics selected".into());
        }
        let task = self.dataset.task();
        let uses_misclassification = self.metrics.contains(&Metric::Misclassification)
            || self.selection_metric == Some(Metric::Misclassification);
        if uses_misclassification && task != Task::ClassificationPm1 {
            return bad("misclassification requires a classification_pm1 dataset".into());
        }
        if self.cv_folds < 2 {
            return bad(format!("cv_folds must be at least 2, got {}", self.cv_folds));
        }
        let positive = |name: &str, grid: &[f64]| -> Result<()> {
            if grid.is_empty() {
                return Err(Error::Config(format!("grid {name} is empty")));
            }
            if grid.iter().any(|&g| !(g > 0.0 && g.is_finite())) {
                return Err(Error::Config(format!("grid {name} must hold positive values")));
            }
            Ok(())
        };
        positive("lambda0", &self.grids.lambda0)?;
        if self.methods.contains(&Method::L2mkl) {
            if self.grids.radius.is_empty() {
                return bad("grid radius is empty".into());
            }
            if self.grids.radius.iter().any(|&r| !(r >= 0.0 && r.is_finite())) {
                return bad("grid radius must hold nonnegative values".into());
            }
        }
        if self.methods.contains(&Method::L1mkl) {
            positive("l1_budget_scale", &self.grids.l1_budget_scale)?;
        }
        let s = &self.solver;
        if !(s.eta > 0.0 && s.eta < 1.0) {
            return bad(format!("solver.eta must lie in (0, 1), got {}", s.eta));
        }
        if s.max_iters == 0 || s.l1_max_iters == 0 {
            return bad("solver iteration caps must be positive".into());
        }
        match (&self.dataset, &self.kernels) {
            (DatasetSource::Corpus { .. }, KernelRecipe::Ngram { .. }) => {}
            (DatasetSource::Corpus { .. }, _) => return bad("corpus datasets need the ngram recipe".into()),
            (_, KernelRecipe::Ngram { .. }) => return bad("the ngram recipe needs a corpus dataset".into()),
            _ => {}
        }
        match &self.kernels {
            KernelRecipe::Explicit { specs, .. } if specs.is_empty() => return bad("no kernels listed".into()),
            KernelRecipe::Ngram { n, size, .. } if *n == 0 || *size == 0 => {
                return bad("ngram n and size must be positive".into())
            }
            _ => {}
        }
        match &self.dataset {
            DatasetSource::Synthetic { d, informative, noise, train, test } => {
                if *d == 0 || informative > d || !(*noise >= 0.0) {
                    return bad("synthetic dataset needs d ≥ 1, informative ≤ d, noise ≥ 0".into());
                }
                if *train < self.cv_folds || *test == 0 {
                    return bad("synthetic dataset needs train ≥ cv_folds and test ≥ 1".into());
                }
            }
            DatasetSource::Delimited { train_fraction, test_path, .. }
            | DatasetSource::Corpus { train_fraction, test_path, .. } => {
                if test_path.is_none() && !(*train_fraction > 0.0 && *train_fraction < 1.0) {
                    return bad(format!("train_fraction must lie in (0, 1), got {train_fraction}"));
                }
            }
        }
        if let Some(fit) = &self.fit {
            if !(fit.lambda0 > 0.0) || !(fit.radius >= 0.0) {
                return bad("fit needs lambda0 > 0 and radius ≥ 0".into());
            }
            if fit.method == Method::L1mkl && !fit.l1_budget.is_some_and(|b| b > 0.0) {
                return bad("fit with l1mkl needs a positive l1_budget".into());
            }
        }
        Ok(())
    }
}
