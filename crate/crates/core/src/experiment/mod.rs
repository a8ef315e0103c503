//! Config-driven experiments: per trial, select hyperparameters of each
//! method by k-fold cross-validation on the training rows, refit on all of
//! them and evaluate on the held-out rows.

pub mod config;
pub mod diagnose;
pub mod metrics;
pub mod report;

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::synthetic::SparseSignal;
use crate::data::text::parse_corpus;
use crate::data::{
    build_ngram_features, load_delimited, make_folds, rank1_specs, split_indices, Corpus, Dataset,
    Standardizer,
};
use crate::diagnostics::{kkt_residuals, orthogonality_check, Orthogonality};
use crate::error::{Error, Result};
use crate::kernels::{combine_into, cross_kernel, KernelFamily, KernelSpec};
use crate::rng::{derive_seed, rng_for};
use crate::solver::{l1_fit, lkrr_fit, solve_shifted, L1Options, LkrrOptions};

pub use config::{DatasetSource, ExperimentConfig, FitSettings, Grids, KernelRecipe, Method, SolverSettings};
pub use metrics::{metric_misclassification, metric_rmse, Metric};
pub use report::{
    emit_tables, read_report, to_canonical_json, write_json, ExperimentReport, Hyper, MethodReport,
    RowAudit, TableFormat, TrialRecord, TrialStatus, REPORT_FILE,
};

use report::{Convergence, KktSummary};

/// Stream indices under a trial seed.
const STREAM_DATA: u64 = 0;
const STREAM_FOLDS: u64 = 1;

/// Loaded data before any per-trial resampling.
enum Source {
    Synthetic {
        signal: SparseSignal,
        train: usize,
        test: usize,
    },
    Table {
        train: Dataset,
        test: Option<Dataset>,
    },
    Text {
        train: Corpus,
        test: Option<Corpus>,
    },
}

fn read_text(path: &std::path::Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn load_source(config: &ExperimentConfig) -> Result<Source> {
    match &config.dataset {
        DatasetSource::Synthetic {
            d,
            informative,
            noise,
            train,
            test,
        } => Ok(Source::Synthetic {
            signal: SparseSignal::new(*d, *informative, *noise)?,
            train: *train,
            test: *test,
        }),
        DatasetSource::Delimited { path, test_path, .. } => {
            let format = config.dataset.delimited_format().expect("delimited source");
            let train = load_delimited(path, &format)?;
            let test = test_path.as_ref().map(|p| load_delimited(p, &format)).transpose()?;
            if let Some(t) = &test {
                if t.dim() != train.dim() {
                    return Err(Error::Data(format!(
                        "test file has {} features, training file {}",
                        t.dim(),
                        train.dim()
                    )));
                }
            }
            Ok(Source::Table { train, test })
        }
        DatasetSource::Corpus {
            path,
            task,
            label_map,
            test_path,
            ..
        } => {
            let train = parse_corpus(&read_text(path)?, *task, label_map.as_ref())?;
            let test = test_path
                .as_ref()
                .map(|p| parse_corpus(&read_text(p)?, *task, label_map.as_ref()))
                .transpose()?;
            Ok(Source::Text { train, test })
        }
    }
}

/// Features, labels and kernels of one trial.
#[derive(Clone, Debug)]
pub struct PreparedTrial {
    pub x_train: DMatrix<f64>,
    pub y_train: DVector<f64>,
    pub x_test: DMatrix<f64>,
    pub y_test: DVector<f64>,
    pub specs: Vec<KernelSpec>,
    pub train_ids: Vec<usize>,
    pub test_ids: Vec<usize>,
}

fn fraction_and_subsample(config: &ExperimentConfig) -> (f64, Option<usize>) {
    match &config.dataset {
        DatasetSource::Delimited {
            train_fraction,
            train_subsample,
            ..
        }
        | DatasetSource::Corpus {
            train_fraction,
            train_subsample,
            ..
        } => (*train_fraction, *train_subsample),
        DatasetSource::Synthetic { .. } => (0.5, None),
    }
}

/// Training and test row ids for one trial. With a separate test source the
/// test ids are offset by the size of the training source.
fn trial_rows(
    config: &ExperimentConfig,
    m_source: usize,
    m_test_source: Option<usize>,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    let (fraction, subsample) = fraction_and_subsample(config);
    let (mut train, test) = match m_test_source {
        Some(n) => ((0..m_source).collect(), (m_source..m_source + n).collect()),
        None => split_indices(m_source, fraction, derive_seed(seed, STREAM_DATA))?,
    };
    if let Some(k) = subsample {
        if k < train.len() {
            train.shuffle(&mut rng_for(seed, STREAM_DATA + 100));
            train.truncate(k);
            train.sort_unstable();
        }
    }
    if train.len() < config.cv_folds {
        return Err(Error::Data(format!(
            "{} training rows cannot form {} folds",
            train.len(),
            config.cv_folds
        )));
    }
    Ok((train, test))
}

fn pick<'a, T>(ids: &[usize], m_source: usize, train: &'a T, test: Option<&'a T>) -> Vec<(&'a T, usize)> {
    ids.iter()
        .map(|&i| if i < m_source { (train, i) } else { (test.expect("test source"), i - m_source) })
        .collect()
}

fn prepare_trial(config: &ExperimentConfig, source: &Source, trial: usize) -> Result<PreparedTrial> {
    let seed = derive_seed(config.master_seed(), trial as u64);
    let (x_train, y_train, x_test, y_test, train_ids, test_ids) = match source {
        Source::Synthetic { signal, train, test } => {
            let mut rng = rng_for(seed, STREAM_DATA);
            let a = signal.dataset(*train, &mut rng);
            let b = signal.dataset(*test, &mut rng);
            (a.x, a.y, b.x, b.y, (0..*train).collect(), (*train..*train + *test).collect())
        }
        Source::Table { train, test } => {
            let m = train.len();
            let (tr, te) = trial_rows(config, m, test.as_ref().map(|t| t.len()), seed)?;
            let gather = |ids: &[usize]| -> Dataset {
                let rows = pick(ids, m, train, test.as_ref());
                let x = DMatrix::from_fn(rows.len(), train.dim(), |i, j| rows[i].0.x[(rows[i].1, j)]);
                let y = DVector::from_fn(rows.len(), |i, _| rows[i].0.y[rows[i].1]);
                Dataset { x, y, feature_names: None, task: train.task }
            };
            let a = gather(&tr);
            let b = gather(&te);
            (a.x, a.y, b.x, b.y, tr, te)
        }
        Source::Text { train, test } => {
            let m = train.len();
            let (tr, te) = trial_rows(config, m, test.as_ref().map(|t| t.len()), seed)?;
            let gather = |ids: &[usize]| -> (Vec<Vec<String>>, DVector<f64>) {
                let rows = pick(ids, m, train, test.as_ref());
                (
                    rows.iter().map(|(c, i)| c.documents[*i].clone()).collect(),
                    DVector::from_fn(rows.len(), |k, _| rows[k].0.labels[rows[k].1]),
                )
            };
            let (docs_train, y_a) = gather(&tr);
            let (docs_test, y_b) = gather(&te);
            let KernelRecipe::Ngram { n, size, offset } = &config.kernels else {
                return Err(Error::Config("corpus datasets need the ngram recipe".into()));
            };
            let (counts, vocab) = build_ngram_features(&docs_train, *n, *size)?;
            let test_counts = vocab.transform(&docs_test);
            let specs = rank1_specs(vocab.len(), *offset);
            return Ok(PreparedTrial {
                x_train: counts,
                y_train: y_a,
                x_test: test_counts,
                y_test: y_b,
                specs,
                train_ids: tr,
                test_ids: te,
            });
        }
    };
    let (x_train, x_test, specs) = match &config.kernels {
        KernelRecipe::Explicit { specs, standardize } => {
            if *standardize {
                let s = Standardizer::fit(&x_train);
                (s.apply(&x_train), s.apply(&x_test), specs.clone())
            } else {
                (x_train, x_test, specs.clone())
            }
        }
        KernelRecipe::Rank1Features { offset } => {
            let specs = rank1_specs(x_train.ncols(), *offset);
            (x_train, x_test, specs)
        }
        KernelRecipe::Ngram { .. } => {
            return Err(Error::Config("the ngram recipe needs a corpus dataset".into()))
        }
    };
    Ok(PreparedTrial {
        x_train,
        y_train,
        x_test,
        y_test,
        specs,
        train_ids,
        test_ids,
    })
}

/// A fitted hypothesis `h(x) = Σ_i α_i Σ_k μ_k K_k(x_i, x)` with metadata.
#[derive(Clone, Debug)]
pub struct FittedMethod {
    pub mu: DVector<f64>,
    pub alpha: DVector<f64>,
    pub convergence: Option<Convergence>,
    pub kkt: Option<KktSummary>,
}

fn candidates(method: Method, grids: &Grids, p: usize) -> Vec<Hyper> {
    let sorted = |g: &[f64]| {
        let mut v = g.to_vec();
        v.sort_by(|a, b| a.partial_cmp(b).expect("finite grid"));
        v.dedup();
        v
    };
    let lambdas = sorted(&grids.lambda0);
    let mut out = Vec::new();
    for &lambda0 in &lambdas {
        match method {
            Method::Uniform => out.push(Hyper { lambda0, ..Hyper::default() }),
            Method::L2mkl => {
                for &r in &sorted(&grids.radius) {
                    out.push(Hyper { lambda0, radius: Some(r), ..Hyper::default() });
                }
            }
            Method::L1mkl => {
                for &s in &sorted(&grids.l1_budget_scale) {
                    out.push(Hyper { lambda0, l1_budget: Some(s * p as f64), ..Hyper::default() });
                }
            }
            Method::BestSingle => {
                for k in 0..p {
                    out.push(Hyper { lambda0, kernel_index: Some(k), ..Hyper::default() });
                }
            }
        }
    }
    out
}

/// Fits `method` with hyperparameters `hyper` on the whole of `family`.
pub fn fit_method(
    method: Method,
    hyper: &Hyper,
    family: &KernelFamily,
    y: &DVector<f64>,
    solver: &SolverSettings,
) -> Result<FittedMethod> {
    let p = family.len();
    let m = family.m();
    let lambda = hyper.lambda0 * m as f64;
    let fixed = |mu: DVector<f64>| -> Result<FittedMethod> {
        let mut k = DMatrix::zeros(m, m);
        combine_into(family, &mu, &mut k);
        let alpha = solve_shifted(&k, y, lambda)?;
        Ok(FittedMethod { mu, alpha, convergence: None, kkt: None })
    };
    match method {
        Method::Uniform => fixed(DVector::from_element(p, 1.0)),
        Method::BestSingle => {
            let k = hyper
                .kernel_index
                .ok_or_else(|| Error::Config("best_single needs a kernel index".into()))?;
            if k >= p {
                return Err(Error::Config(format!("kernel index {k} out of range for {p} kernels")));
            }
            let mut mu = DVector::zeros(p);
            mu[k] = 1.0;
            fixed(mu)
        }
        Method::L2mkl => {
            let mut opts = LkrrOptions::new(p, hyper.lambda0, hyper.radius.unwrap_or(0.0));
            opts.eta = solver.eta;
            opts.epsilon = solver.epsilon;
            opts.max_iters = solver.max_iters;
            opts.record_trajectory = false;
            let (model, _) = lkrr_fit(family, y, &opts)?;
            let (r_alpha, r_mu) = kkt_residuals(&model, family, y)?;
            Ok(FittedMethod {
                mu: model.mu.mu.clone(),
                alpha: model.alpha.0.clone(),
                convergence: Some(Convergence {
                    iterations: model.iterations,
                    converged: model.converged,
                    final_step: Some(model.final_step),
                }),
                kkt: Some(KktSummary { r_alpha, r_mu }),
            })
        }
        Method::L1mkl => {
            let budget = hyper
                .l1_budget
                .ok_or_else(|| Error::Config("l1mkl needs a budget".into()))?;
            let opts = L1Options {
                tol: solver.l1_tol,
                max_iters: solver.l1_max_iters,
                ..L1Options::default()
            };
            let fit = l1_fit(family, y, hyper.lambda0, budget, &opts)?;
            Ok(FittedMethod {
                mu: fit.mu,
                alpha: fit.alpha.0,
                convergence: Some(Convergence {
                    iterations: fit.iterations,
                    converged: fit.converged,
                    final_step: None,
                }),
                kkt: None,
            })
        }
    }
}

struct Fold {
    family: KernelFamily,
    y: DVector<f64>,
    train: Vec<usize>,
    val: Vec<usize>,
}

/// Mean validation score of every candidate; failed fits score `+∞`.
fn cv_scores(
    method: Method,
    cands: &[Hyper],
    family: &KernelFamily,
    y: &DVector<f64>,
    folds: &[Fold],
    metric: Metric,
    solver: &SolverSettings,
) -> Vec<f64> {
    cands
        .iter()
        .map(|h| {
            let mut total = 0.0;
            for f in folds {
                let score = fit_method(method, h, &f.family, &f.y, solver).and_then(|fit| {
                    let pred = family.combined_block(&fit.mu, &f.val, &f.train) * &fit.alpha;
                    metric.evaluate(&pred, &y.select_rows(&f.val))
                });
                match score {
                    Ok(s) if s.is_finite() => total += s,
                    _ => return f64::INFINITY,
                }
            }
            total / folds.len() as f64
        })
        .collect()
}

/// First candidate with the smallest score. Candidates are ordered by `λ0`,
/// then by the second hyperparameter, so ties resolve to the smallest.
fn select(scores: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &s) in scores.iter().enumerate() {
        if s.is_finite() && best.is_none_or(|b| s < scores[b]) {
            best = Some(i);
        }
    }
    best
}

fn run_method(
    config: &ExperimentConfig,
    method: Method,
    trial: usize,
    prepared: &PreparedTrial,
    family: &KernelFamily,
    folds: &[Fold],
) -> TrialRecord {
    let cands = candidates(method, &config.grids, family.len());
    let scores = cv_scores(method, &cands, family, &prepared.y_train, folds, config.selection(), &config.solver);
    let Some(best) = select(&scores) else {
        return TrialRecord::failed(trial, "every candidate failed during cross-validation".into());
    };
    let hyper = cands[best].clone();
    let outcome = fit_method(method, &hyper, family, &prepared.y_train, &config.solver).and_then(|fit| {
        let pred = cross_kernel(&prepared.specs, &fit.mu, &prepared.x_train, &prepared.x_test)? * &fit.alpha;
        let mut test = BTreeMap::new();
        for &metric in &config.metrics {
            test.insert(metric, metric.evaluate(&pred, &prepared.y_test)?);
        }
        Ok((fit, test))
    });
    match outcome {
        Ok((fit, test)) => TrialRecord {
            trial,
            status: TrialStatus::Ok,
            reason: None,
            hyper: Some(hyper),
            cv_score: Some(scores[best]),
            test,
            convergence: fit.convergence,
            kkt: fit.kkt,
            active_kernels: Some(fit.mu.iter().filter(|&&w| w != 0.0).count()),
        },
        Err(e) => TrialRecord::failed(trial, e.to_string()),
    }
}

struct TrialOutcome {
    records: Vec<TrialRecord>,
    audit: RowAudit,
    orthogonality: Option<Orthogonality>,
    kernel_count: usize,
}

fn run_trial(config: &ExperimentConfig, source: &Source, trial: usize) -> TrialOutcome {
    let failed = |reason: String| TrialOutcome {
        records: config
            .methods
            .iter()
            .map(|_| TrialRecord::failed(trial, reason.clone()))
            .collect(),
        audit: RowAudit {
            trial,
            train_rows: 0,
            test_rows: 0,
            overlap: 0,
            cv_rows_outside_train: 0,
        },
        orthogonality: None,
        kernel_count: 0,
    };
    let prepared = match prepare_trial(config, source, trial) {
        Ok(p) => p,
        Err(e) => return failed(e.to_string()),
    };
    let family = match KernelFamily::build(prepared.specs.clone(), &prepared.x_train) {
        Ok(f) => f,
        Err(e) => return failed(e.to_string()),
    };
    let m = family.m();
    let seed = derive_seed(config.master_seed(), trial as u64);
    let plan = match make_folds(m, config.cv_folds, derive_seed(seed, STREAM_FOLDS)) {
        Ok(p) => p,
        Err(e) => return failed(e.to_string()),
    };
    let folds: Vec<Fold> = (0..config.cv_folds)
        .map(|k| {
            let (train, val) = plan.fold(k);
            Fold {
                family: family.restrict(&train),
                y: prepared.y_train.select_rows(&train),
                train,
                val,
            }
        })
        .collect();

    let train_set: BTreeSet<usize> = prepared.train_ids.iter().cloned().collect();
    let cv_ids: BTreeSet<usize> = folds
        .iter()
        .flat_map(|f| f.train.iter().chain(&f.val))
        .map(|&local| prepared.train_ids[local])
        .collect();
    let audit = RowAudit {
        trial,
        train_rows: prepared.train_ids.len(),
        test_rows: prepared.test_ids.len(),
        overlap: prepared.test_ids.iter().filter(|i| train_set.contains(i)).count(),
        cv_rows_outside_train: cv_ids.difference(&train_set).count(),
    };
    let records = config
        .methods
        .iter()
        .map(|&method| run_method(config, method, trial, &prepared, &family, &folds))
        .collect();
    TrialOutcome {
        records,
        audit,
        orthogonality: Some(orthogonality_check(&prepared.specs, &prepared.x_train)),
        kernel_count: family.len(),
    }
}

/// Runs the full protocol. Trials run on the current rayon pool; results are
/// assembled in trial order, so the report does not depend on scheduling.
/// When `config.output` is set the report is written there atomically.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    config.validate()?;
    let source = load_source(config)?;
    let outcomes: Vec<TrialOutcome> = (0..config.trials)
        .into_par_iter()
        .map(|t| run_trial(config, &source, t))
        .collect();
    let methods = config
        .methods
        .iter()
        .enumerate()
        .map(|(j, &method)| {
            MethodReport::new(method, outcomes.iter().map(|o| o.records[j].clone()).collect())
        })
        .collect();
    let first = outcomes.iter().find(|o| o.orthogonality.is_some());
    let report = ExperimentReport {
        seed: config.master_seed(),
        trials: config.trials,
        cv_folds: config.cv_folds,
        selection_metric: config.selection(),
        kernel_count: first.map_or(0, |o| o.kernel_count),
        orthogonality: first
            .and_then(|o| o.orthogonality)
            .unwrap_or(Orthogonality::NotCheckable),
        methods,
        audit: outcomes.into_iter().map(|o| o.audit).collect(),
    };
    if let Some(dir) = &config.output {
        write_json(&report, &dir.join(REPORT_FILE))?;
    }
    Ok(report)
}

/// Output of the `fit` command: one model trained on every row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub method: Method,
    pub hyper: Hyper,
    pub train_rows: usize,
    pub kernel_count: usize,
    pub mu: Vec<f64>,
    pub alpha: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub convergence: Option<Convergence>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kkt: Option<KktSummary>,
    pub orthogonality: Orthogonality,
    pub train_metrics: BTreeMap<Metric, f64>,
}

/// Fits one model on the full training source with the `[fit]` settings.
pub fn run_fit(config: &ExperimentConfig) -> Result<FitReport> {
    config.validate()?;
    let settings = config
        .fit
        .as_ref()
        .ok_or_else(|| Error::Config("the fit command needs a [fit] section".into()))?;
    let source = load_source(config)?;
    let prepared = prepare_trial(config, &source, 0)?;
    let family = KernelFamily::build(prepared.specs.clone(), &prepared.x_train)?;
    let hyper = Hyper {
        lambda0: settings.lambda0,
        radius: (settings.method == Method::L2mkl).then_some(settings.radius),
        l1_budget: settings.l1_budget.filter(|_| settings.method == Method::L1mkl),
        kernel_index: settings.kernel_index.filter(|_| settings.method == Method::BestSingle),
    };
    let fit = fit_method(settings.method, &hyper, &family, &prepared.y_train, &config.solver)?;
    let pred = cross_kernel(&prepared.specs, &fit.mu, &prepared.x_train, &prepared.x_train)? * &fit.alpha;
    let mut train_metrics = BTreeMap::new();
    for &metric in &config.metrics {
        train_metrics.insert(metric, metric.evaluate(&pred, &prepared.y_train)?);
    }
    Ok(FitReport {
        method: settings.method,
        hyper,
        train_rows: family.m(),
        kernel_count: family.len(),
        mu: fit.mu.iter().cloned().collect(),
        alpha: fit.alpha.iter().cloned().collect(),
        convergence: fit.convergence,
        kkt: fit.kkt,
        orthogonality: orthogonality_check(&prepared.specs, &prepared.x_train),
        train_metrics,
    })
}
