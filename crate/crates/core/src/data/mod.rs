//! Datasets, delimited-file ingestion, splits and cross-validation folds.
//! Text corpora and n-gram features live in [`text`]; seeded generators for
//! tests and experiments in [`synthetic`].

pub mod synthetic;
pub mod text;

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{KernelFamily, KernelSpec};
use crate::rng::rng_for;

pub use text::{build_ngram_features, load_corpus, tokenize, Corpus, NgramVocabulary};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Regression,
    /// Labels are exactly `−1` or `+1`.
    ClassificationPm1,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    pub feature_names: Option<Vec<String>>,
    pub task: Task,
}

impl Dataset {
    pub fn new(
        x: DMatrix<f64>,
        y: DVector<f64>,
        feature_names: Option<Vec<String>>,
        task: Task,
    ) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(Error::Shape(format!("{} rows with {} labels", x.nrows(), y.len())));
        }
        if let Some(names) = &feature_names {
            if names.len() != x.ncols() {
                return Err(Error::Shape(format!(
                    "{} feature names for {} columns",
                    names.len(),
                    x.ncols()
                )));
            }
        }
        if let Some(pos) = x.iter().position(|v| !v.is_finite()) {
            let (i, j) = (pos % x.nrows(), pos / x.nrows());
            return Err(Error::Data(format!("non-finite feature {} at row {i}, column {j}", x[pos])));
        }
        if let Some((i, v)) = y.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::Data(format!("non-finite label {v} at row {i}")));
        }
        if task == Task::ClassificationPm1 {
            if let Some((i, v)) = y.iter().enumerate().find(|(_, &v)| v != 1.0 && v != -1.0) {
                return Err(Error::Data(format!("label {v} at row {i} is not ±1")));
            }
        }
        Ok(Dataset {
            x,
            y,
            feature_names,
            task,
        })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    /// Rows `rows` in the given order.
    pub fn subset(&self, rows: &[usize]) -> Dataset {
        Dataset {
            x: self.x.select_rows(rows),
            y: self.y.select_rows(rows),
            feature_names: self.feature_names.clone(),
            task: self.task,
        }
    }
}

/// Which column holds the label.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LabelColumn {
    First,
    #[default]
    Last,
    Index(usize),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DelimitedFormat {
    #[serde(default)]
    pub label_column: LabelColumn,
    #[serde(default = "default_delimiter")]
    pub delimiter: char,
    #[serde(default)]
    pub has_header: bool,
    pub task: Task,
    /// Raw label token to numeric label. Required for labels that are not
    /// already numeric; for classification every mapped value must be ±1.
    #[serde(default)]
    pub label_map: Option<BTreeMap<String, f64>>,
}

fn default_delimiter() -> char {
    ','
}

impl DelimitedFormat {
    pub fn csv(task: Task) -> Self {
        DelimitedFormat {
            label_column: LabelColumn::Last,
            delimiter: ',',
            has_header: false,
            task,
            label_map: None,
        }
    }
}

pub(crate) fn map_label(
    raw: &str,
    map: Option<&BTreeMap<String, f64>>,
    task: Task,
    location: &str,
) -> Result<f64> {
    let value = match map {
        Some(map) => *map
            .get(raw)
            .ok_or_else(|| Error::Data(format!("{location}: unmapped label value {raw:?}")))?,
        None => raw
            .parse::<f64>()
            .map_err(|_| Error::Data(format!("{location}: label {raw:?} is not numeric")))?,
    };
    if !value.is_finite() {
        return Err(Error::Data(format!("{location}: non-finite label {raw:?}")));
    }
    if task == Task::ClassificationPm1 && value != 1.0 && value != -1.0 {
        return Err(Error::Data(format!("{location}: label {raw:?} does not map to ±1")));
    }
    Ok(value)
}

/// Reads a delimited numeric file, rows in file order.
pub fn load_delimited(path: impl AsRef<Path>, format: &DelimitedFormat) -> Result<Dataset> {
    let path = path.as_ref();
    if !format.delimiter.is_ascii() {
        return Err(Error::Config(format!("delimiter {:?} is not ASCII", format.delimiter)));
    }
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_delimited(&text, format)
}

/// [`load_delimited`] on in-memory text.
pub fn parse_delimited(text: &str, format: &DelimitedFormat) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(format.delimiter as u8)
        .has_headers(format.has_header)
        .trim(csv::Trim::All)
        .flexible(false)
        .from_reader(text.as_bytes());

    let header: Option<Vec<String>> = if format.has_header {
        let h = reader
            .headers()
            .map_err(|e| Error::Data(format!("header: {e}")))?;
        Some(h.iter().map(str::to_string).collect())
    } else {
        None
    };

    let mut features: Vec<f64> = Vec::new();
    let mut labels: Vec<f64> = Vec::new();
    let mut width: Option<usize> = None;
    let mut label_index = 0;
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            Error::Data(format!("line {line}: {e}"))
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.len() == 1 && record.get(0) == Some("") {
            continue;
        }
        let cols = record.len();
        if width.is_none() {
            if cols < 2 {
                return Err(Error::Data(format!("line {line}: need a label and at least one feature")));
            }
            label_index = match format.label_column {
                LabelColumn::First => 0,
                LabelColumn::Last => cols - 1,
                LabelColumn::Index(i) if i < cols => i,
                LabelColumn::Index(i) => {
                    return Err(Error::Data(format!("line {line}: label column {i} absent ({cols} columns)")))
                }
            };
            width = Some(cols);
        }
        for (j, cell) in record.iter().enumerate() {
            let location = format!("line {line}, column {}", j + 1);
            if j == label_index {
                labels.push(map_label(cell, format.label_map.as_ref(), format.task, &location)?);
                continue;
            }
            let value: f64 = cell
                .parse()
                .map_err(|_| Error::Data(format!("{location}: non-numeric cell {cell:?}")))?;
            if !value.is_finite() {
                return Err(Error::Data(format!("{location}: non-finite cell {cell:?}")));
            }
            features.push(value);
        }
    }
    let Some(width) = width else {
        return Err(Error::Data("empty dataset".into()));
    };
    let m = labels.len();
    let d = width - 1;
    let names = header.map(|h| {
        h.into_iter()
            .enumerate()
            .filter(|(j, _)| *j != label_index)
            .map(|(_, n)| n)
            .collect()
    });
    Dataset::new(
        DMatrix::from_row_slice(m, d, &features),
        DVector::from_vec(labels),
        names,
        format.task,
    )
}

/// Column means and standard deviations fit on one set of rows and applied
/// to others. Constant columns are centered but not scaled.
#[derive(Clone, Debug, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(x: &DMatrix<f64>) -> Self {
        let m = x.nrows().max(1) as f64;
        let mut mean = Vec::with_capacity(x.ncols());
        let mut scale = Vec::with_capacity(x.ncols());
        for col in x.column_iter() {
            let mu = col.sum() / m;
            let var = col.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / m;
            mean.push(mu);
            scale.push(if var > 0.0 { var.sqrt() } else { 1.0 });
        }
        Standardizer { mean, scale }
    }

    pub fn apply(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| (x[(i, j)] - self.mean[j]) / self.scale[j])
    }
}

/// Rank-1 kernels `v_i v_iᵀ`, one per column of `counts`, plus the constant
/// offset kernel when requested.
pub fn rank1_family(counts: &DMatrix<f64>, include_offset: bool) -> Result<KernelFamily> {
    if counts.iter().any(|&c| !(c >= 0.0 && c.is_finite())) {
        return Err(Error::Data("count matrix must be nonnegative and finite".into()));
    }
    KernelFamily::build(rank1_specs(counts.ncols(), include_offset), counts)
}

pub fn rank1_specs(columns: usize, include_offset: bool) -> Vec<KernelSpec> {
    let mut specs: Vec<KernelSpec> = (0..columns)
        .map(|feature_index| KernelSpec::Rank1Feature { feature_index })
        .collect();
    if include_offset {
        specs.push(KernelSpec::ConstantOffset);
    }
    specs
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub assignments: Vec<usize>,
    pub seed: u64,
}

impl FoldPlan {
    /// `(training rows, validation rows)` for fold `fold`, each ascending.
    pub fn fold(&self, fold: usize) -> (Vec<usize>, Vec<usize>) {
        let (val, train): (Vec<usize>, Vec<usize>) =
            (0..self.assignments.len()).partition(|&i| self.assignments[i] == fold);
        (train, val)
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &a in &self.assignments {
            sizes[a] += 1;
        }
        sizes
    }
}

/// Shuffles `0..m` and deals the positions round-robin into `k` folds.
pub fn make_folds(m: usize, k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 || k > m {
        return Err(Error::Config(format!("need 2 ≤ k ≤ m for folds, got k = {k}, m = {m}")));
    }
    let mut order: Vec<usize> = (0..m).collect();
    order.shuffle(&mut rng_for(seed, 0));
    let mut assignments = vec![0; m];
    for (position, &row) in order.iter().enumerate() {
        assignments[row] = position % k;
    }
    Ok(FoldPlan { k, assignments, seed })
}

/// Row indices of a random split: `round(fraction · m)` training rows and the
/// rest for testing, each ascending.
pub fn split_indices(m: usize, fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Config(format!("split fraction must lie in (0, 1), got {fraction}")));
    }
    let n_train = (fraction * m as f64).round() as usize;
    if n_train == 0 || n_train == m {
        return Err(Error::Config(format!(
            "split fraction {fraction} leaves an empty side for m = {m}"
        )));
    }
    let mut order: Vec<usize> = (0..m).collect();
    order.shuffle(&mut rng_for(seed, 0));
    let mut train = order[..n_train].to_vec();
    let mut test = order[n_train..].to_vec();
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

pub fn split(dataset: &Dataset, fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    let (train, test) = split_indices(dataset.len(), fraction, seed)?;
    Ok((dataset.subset(&train), dataset.subset(&test)))
}
