//! Report types, canonical JSON serialization and table emission.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::ser::{Formatter, PrettyFormatter};

use super::config::Method;
use super::metrics::Metric;
use crate::diagnostics::Orthogonality;
use crate::error::{Error, Result};

/// Chosen hyperparameters of one fitted method.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
pub struct Hyper {
    pub lambda0: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radius: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l1_budget: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel_index: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Convergence {
    pub iterations: usize,
    pub converged: bool,
    /// `‖α′ − α‖` at exit for the fixed-point solver; absent otherwise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_step: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KktSummary {
    pub r_alpha: f64,
    pub r_mu: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialStatus {
    Ok,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub status: TrialStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hyper: Option<Hyper>,
    /// Mean validation value of the selection metric at `hyper`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cv_score: Option<f64>,
    pub test: BTreeMap<Metric, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub convergence: Option<Convergence>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kkt: Option<KktSummary>,
    /// Number of base kernels with nonzero weight.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub active_kernels: Option<usize>,
}

impl TrialRecord {
    pub fn failed(trial: usize, reason: String) -> Self {
        TrialRecord {
            trial,
            status: TrialStatus::Failed,
            reason: Some(reason),
            hyper: None,
            cv_score: None,
            test: BTreeMap::new(),
            convergence: None,
            kkt: None,
            active_kernels: None,
        }
    }
}

/// Mean and sample standard deviation over the successful trials.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub count: usize,
    pub mean: Option<f64>,
    /// `None` with fewer than two values.
    pub std: Option<f64>,
}

impl Summary {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        let mean = (n > 0).then(|| values.iter().sum::<f64>() / n as f64);
        let std = mean.filter(|_| n > 1).map(|mu| {
            (values.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / (n - 1) as f64).sqrt()
        });
        Summary { count: n, mean, std }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodReport {
    pub method: Method,
    pub summary: BTreeMap<Metric, Summary>,
    pub trials: Vec<TrialRecord>,
}

impl MethodReport {
    pub fn new(method: Method, trials: Vec<TrialRecord>) -> Self {
        let mut summary = BTreeMap::new();
        let metrics: std::collections::BTreeSet<Metric> =
            trials.iter().flat_map(|t| t.test.keys().cloned()).collect();
        for metric in metrics {
            let values = metric_values(&trials, metric);
            summary.insert(metric, Summary::of(&values));
        }
        MethodReport { method, summary, trials }
    }
}

/// Test values of `metric` over successful trials, in trial order.
pub fn metric_values(trials: &[TrialRecord], metric: Metric) -> Vec<f64> {
    trials
        .iter()
        .filter(|t| t.status == TrialStatus::Ok)
        .filter_map(|t| t.test.get(&metric).cloned())
        .collect()
}

/// Which rows each trial used. Row ids index the training source and, with a
/// separate test source, continue after its last row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RowAudit {
    pub trial: usize,
    pub train_rows: usize,
    pub test_rows: usize,
    /// Row ids present in both the training and the test side.
    pub overlap: usize,
    /// Rows touched by cross-validation that are not training rows.
    pub cv_rows_outside_train: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub seed: u64,
    pub trials: usize,
    pub cv_folds: usize,
    pub selection_metric: Metric,
    pub kernel_count: usize,
    /// Orthogonality of the base kernels on the first trial's training rows.
    pub orthogonality: Orthogonality,
    pub methods: Vec<MethodReport>,
    pub audit: Vec<RowAudit>,
}

impl ExperimentReport {
    pub fn method(&self, method: Method) -> Option<&MethodReport> {
        self.methods.iter().find(|m| m.method == method)
    }

    pub fn mean(&self, method: Method, metric: Metric) -> Option<f64> {
        self.method(method)?.summary.get(&metric)?.mean
    }
}

/// Floats as 17 significant digits in scientific notation.
pub fn format_f64(value: f64) -> String {
    format!("{value:.16e}")
}

/// Pretty-printed JSON that writes every float with [`format_f64`].
struct CanonicalFormatter(PrettyFormatter<'static>);

impl Formatter for CanonicalFormatter {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> std::io::Result<()> {
        writer.write_all(format_f64(value).as_bytes())
    }

    fn begin_array<W: ?Sized + Write>(&mut self, writer: &mut W) -> std::io::Result<()> {
        self.0.begin_array(writer)
    }

    fn end_array<W: ?Sized + Write>(&mut self, writer: &mut W) -> std::io::Result<()> {
        self.0.end_array(writer)
    }

    fn begin_array_value<W: ?Sized + Write>(&mut self, writer: &mut W, first: bool) -> std::io::Result<()> {
        self.0.begin_array_value(writer, first)
    }

    fn end_array_value<W: ?Sized + Write>(&mut self, writer: &mut W) -> std::io::Result<()> {
        self.0.end_array_value(writer)
    }

    fn begin_object<W: ?Sized + Write>(&mut self, writer: &mut W) -> std::io::Result<()> {
        self.0.begin_object(writer)
    }

    fn end_object<W: ?Sized + Write>(&mut self, writer: &mut W) -> std::io::Result<()> {
        self.0.end_object(writer)
    }

    fn begin_object_key<W: ?Sized + Write>(&mut self, writer: &mut W, first: bool) -> std::io::Result<()> {
        self.0.begin_object_key(writer, first)
    }

    fn begin_object_value<W: ?Sized + Write>(&mut self, writer: &mut W) -> std::io::Result<()> {
        self.0.begin_object_value(writer)
    }

    fn end_object_value<W: ?Sized + Write>(&mut self, writer: &mut W) -> std::io::Result<()> {
        self.0.end_object_value(writer)
    }
}

/// Canonical JSON bytes of any serializable value.
pub fn to_canonical_json<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut out, CanonicalFormatter(PrettyFormatter::new()));
    value
        .serialize(&mut ser)
        .map_err(|e| Error::Data(format!("serialization failed: {e}")))?;
    out.push(b'\n');
    Ok(out)
}

/// Writes `bytes` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let name = path
        .file_name()
        .ok_or_else(|| Error::Config(format!("{} is not a file path", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp", name.to_string_lossy()));
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    write_atomic(path, &to_canonical_json(value)?)
}

/// Report file name inside an output directory.
pub const REPORT_FILE: &str = "report.json";

pub fn read_report(path: &Path) -> Result<ExperimentReport> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TableFormat {
    Csv,
    Json,
}

impl TableFormat {
    fn extension(self) -> &'static str {
        match self {
            TableFormat::Csv => "csv",
            TableFormat::Json => "json",
        }
    }
}

/// One table row: a method's summary for one metric.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub method: Method,
    pub metric: Metric,
    pub count: usize,
    pub mean: Option<f64>,
    pub std: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tables {
    pub absolute: Vec<TableRow>,
    /// Each row divided by the uniform baseline's mean for the same metric;
    /// `None` without a usable baseline.
    pub normalized: Option<Vec<TableRow>>,
    pub notes: Vec<String>,
}

pub const BASELINE: Method = Method::Uniform;

pub fn build_tables(report: &ExperimentReport) -> Tables {
    let mut absolute = Vec::new();
    for m in &report.methods {
        for (metric, s) in &m.summary {
            absolute.push(TableRow {
                method: m.method,
                metric: *metric,
                count: s.count,
                mean: s.mean,
                std: s.std,
            });
        }
    }
    let mut notes = Vec::new();
    let normalized = match report.method(BASELINE) {
        None => {
            notes.push("normalized table omitted: the uniform baseline was not run".to_string());
            None
        }
        Some(base) => {
            let mut rows = Vec::new();
            for row in &absolute {
                let denom = base.summary.get(&row.metric).and_then(|s| s.mean);
                match denom {
                    Some(d) if d != 0.0 => rows.push(TableRow {
                        mean: row.mean.map(|v| v / d),
                        std: row.std.map(|v| v / d),
                        ..row.clone()
                    }),
                    _ => notes.push(format!(
                        "normalized {} {} omitted: baseline mean is zero or missing",
                        row.method.name(),
                        row.metric.name()
                    )),
                }
            }
            Some(rows)
        }
    };
    Tables {
        absolute,
        normalized,
        notes,
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(format_f64).unwrap_or_default()
}

fn table_bytes(rows: &[TableRow], format: TableFormat) -> Result<Vec<u8>> {
    match format {
        TableFormat::Json => to_canonical_json(&rows),
        TableFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            let fail = |e: csv::Error| Error::Data(format!("csv: {e}"));
            w.write_record(["method", "metric", "count", "mean", "std"]).map_err(fail)?;
            for r in rows {
                w.write_record([
                    r.method.name().to_string(),
                    r.metric.name().to_string(),
                    r.count.to_string(),
                    opt(r.mean),
                    opt(r.std),
                ])
                .map_err(fail)?;
            }
            w.into_inner().map_err(|e| Error::Data(format!("csv: {e}")))
        }
    }
}

/// Writes `absolute.<ext>` and, when a baseline exists, `normalized.<ext>`
/// into `dir`. Returns the written paths and any notes.
pub fn emit_tables(report: &ExperimentReport, format: TableFormat, dir: &Path) -> Result<(Vec<PathBuf>, Vec<String>)> {
    let tables = build_tables(report);
    let mut written = Vec::new();
    let ext = format.extension();
    let path = dir.join(format!("absolute.{ext}"));
    write_atomic(&path, &table_bytes(&tables.absolute, format)?)?;
    written.push(path);
    if let Some(rows) = &tables.normalized {
        let path = dir.join(format!("normalized.{ext}"));
        write_atomic(&path, &table_bytes(rows, format)?)?;
        written.push(path);
    }
    Ok((written, tables.notes))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(trial: usize, rmse: f64) -> TrialRecord {
        TrialRecord {
            trial,
            status: TrialStatus::Ok,
            reason: None,
            hyper: Some(Hyper { lambda0: 0.1, ..Hyper::default() }),
            cv_score: Some(rmse),
            test: BTreeMap::from([(Metric::Rmse, rmse)]),
            convergence: None,
            kkt: None,
            active_kernels: None,
        }
    }

    fn report(methods: Vec<(Method, Vec<f64>)>) -> ExperimentReport {
        ExperimentReport {
            seed: 1,
            trials: methods[0].1.len(),
            cv_folds: 2,
            selection_metric: Metric::Rmse,
            kernel_count: 1,
            orthogonality: Orthogonality::Orthogonal,
            methods: methods
                .into_iter()
                .map(|(m, vals)| {
                    MethodReport::new(m, vals.iter().enumerate().map(|(i, &v)| record(i, v)).collect())
                })
                .collect(),
            audit: vec![],
        }
    }

    #[test]
    fn summary_statistics() {
        let s = Summary::of(&[1.0, 2.0, 3.0]);
        assert_eq!(s.mean, Some(2.0));
        assert_eq!(s.std, Some(1.0));
        assert_eq!(Summary::of(&[4.0]).std, None);
        assert_eq!(Summary::of(&[]).mean, None);
    }

    #[test]
    fn failed_trials_are_excluded_from_summary() {
        let mut trials = vec![record(0, 1.0), record(1, 3.0)];
        trials.push(TrialRecord::failed(2, "diverged".into()));
        let m = MethodReport::new(Method::L2mkl, trials);
        assert_eq!(m.summary[&Metric::Rmse].count, 2);
        assert_eq!(m.summary[&Metric::Rmse].mean, Some(2.0));
    }

    #[test]
    fn normalized_row_examples() {
        let r = report(vec![(Method::Uniform, vec![2.0]), (Method::L2mkl, vec![1.0])]);
        let t = build_tables(&r);
        let norm = t.normalized.unwrap();
        assert_eq!(norm[0].mean, Some(1.0));
        assert_eq!(norm[1].mean, Some(0.5));

        let r = report(vec![(Method::Uniform, vec![0.3, 0.7, 1.9]), (Method::L1mkl, vec![1.0, 2.0, 3.0])]);
        assert_eq!(build_tables(&r).normalized.unwrap()[0].mean, Some(1.0));

        let r = report(vec![(Method::L2mkl, vec![1.0])]);
        let t = build_tables(&r);
        assert!(t.normalized.is_none());
        assert_eq!(t.notes.len(), 1);
    }

    #[test]
    fn floats_keep_seventeen_digits() {
        let x = 0.1f64 + 0.2;
        let s = format_f64(x);
        assert_eq!(s.parse::<f64>().unwrap(), x);
        assert_eq!(s, "3.0000000000000004e-1");
        let json = String::from_utf8(to_canonical_json(&vec![1.0f64, x]).unwrap()).unwrap();
        assert!(json.contains("1.0000000000000000e0"));
        let back: Vec<f64> = serde_json::from_str(&json).unwrap();
        assert_eq!(back, vec![1.0, x]);
    }

    #[test]
    fn csv_and_json_tables_agree() {
        let r = report(vec![(Method::Uniform, vec![2.0, 2.5]), (Method::L2mkl, vec![1.0, 1.25])]);
        let dir = tempfile::tempdir().unwrap();
        emit_tables(&r, TableFormat::Csv, dir.path()).unwrap();
        emit_tables(&r, TableFormat::Json, dir.path()).unwrap();
        for name in ["absolute", "normalized"] {
            let json: Vec<TableRow> =
                serde_json::from_slice(&std::fs::read(dir.path().join(format!("{name}.json"))).unwrap()).unwrap();
            let mut rdr = csv::Reader::from_path(dir.path().join(format!("{name}.csv"))).unwrap();
            let rows: Vec<csv::StringRecord> = rdr.records().map(|r| r.unwrap()).collect();
            assert_eq!(rows.len(), json.len());
            for (c, j) in rows.iter().zip(&json) {
                assert_eq!(&c[1], j.metric.name());
                assert_eq!(c[3].parse::<f64>().unwrap(), j.mean.unwrap());
                assert_eq!(c[4].parse::<f64>().unwrap(), j.std.unwrap());
            }
        }
    }

    #[test]
    fn report_round_trips() {
        let r = report(vec![(Method::Uniform, vec![2.0, 2.5])]);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(REPORT_FILE);
        write_json(&r, &path).unwrap();
        assert_eq!(read_report(&path).unwrap(), r);
        assert!(!dir.path().join(".report.json.tmp").exists());
    }
}
