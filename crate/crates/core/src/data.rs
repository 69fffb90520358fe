//! Data model: image records, manifests, feature matrices and failure labeling.
//!
//! File formats:
//! - Manifest: CSV with header `id,path,true,pred,scenario`. For regression
//!   tasks `true`/`pred` hold semicolon-separated reals. The task is named by a
//!   JSON sidecar next to the manifest (same stem, `.json` extension), e.g.
//!   `{"task":"regression","metric":"squared_error","threshold":0.18}`. Without
//!   a sidecar the manifest is read as a classification manifest.
//! - Feature CSV: header `id,f0,...,f{M-1}`, one row per image.
//! - FMX1: magic `FMX1`, u64 LE rows, u64 LE cols, rows*cols f64 LE row-major,
//!   then one u32-LE-length-prefixed UTF-8 id per row.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::{Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const FMX1_MAGIC: &[u8; 4] = b"FMX1";
pub const MANIFEST_HEADER: [&str; 5] = ["id", "path", "true", "pred", "scenario"];

#[derive(Debug, Error)]
pub enum DataError {
    #[error("file not found: {0}")]
    MissingFile(PathBuf),
    #[error("parse error at line {line}: {message}")]
    ParseError { line: usize, message: String },
    #[error("malformed binary matrix: {0}")]
    Malformed(String),
    #[error("duplicate image id `{0}`")]
    DuplicateId(String),
    #[error("empty image id at record {0}")]
    EmptyId(usize),
    #[error("record `{0}` mixes output kinds or vector lengths")]
    MixedOutputKinds(String),
    #[error("non-finite value at row {row}, column {col}")]
    NonFiniteValue { row: usize, col: usize },
    #[error("row {row} has {found} values, expected {expected}")]
    RaggedRow { row: usize, found: usize, expected: usize },
    #[error("feature matrix must have at least one column")]
    NoColumns,
    #[error("feature matrix is empty")]
    EmptyMatrix,
    #[error("regression threshold must be positive and finite, got {0}")]
    InvalidThreshold(f64),
    #[error("no feature row for image `{0}`")]
    MissingFeatures(String),
    #[error("invalid task sidecar: {0}")]
    InvalidSidecar(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = DataError> = std::result::Result<T, E>;

/// True or predicted DNN output: a class label or a numeric vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Output {
    Label(String),
    Vector(Vec<f64>),
}

impl Output {
    fn same_kind(&self, other: &Output) -> bool {
        match (self, other) {
            (Output::Label(_), Output::Label(_)) => true,
            (Output::Vector(a), Output::Vector(b)) => a.len() == b.len(),
            _ => false,
        }
    }

    fn to_field(&self) -> String {
        match self {
            Output::Label(s) => s.clone(),
            Output::Vector(v) => v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(";"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub id: String,
    pub path: Option<String>,
    pub true_output: Output,
    /// `None` when the image has not been evaluated yet (freshly injected).
    pub predicted_output: Option<Output>,
    /// Injected-scenario tag; `None` marks a pre-existing (untagged) failure.
    pub scenario: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegressionMetric {
    /// Sum of squared component differences (a single angle for SAP-like tasks).
    SquaredError,
    /// Outputs are flattened `x;y` point lists; any point farther than the
    /// threshold from its ground truth counts as a failure.
    PointDistance,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Task {
    Classification,
    Regression { threshold: f64, metric: RegressionMetric },
}

impl Task {
    pub fn validate(&self) -> Result<()> {
        if let Task::Regression { threshold, .. } = *self {
            if !(threshold.is_finite() && threshold > 0.0) {
                return Err(DataError::InvalidThreshold(threshold));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    records: Vec<ImageRecord>,
    task: Task,
}

impl Dataset {
    pub fn new(records: Vec<ImageRecord>, task: Task) -> Result<Self> {
        task.validate()?;
        let mut seen = HashSet::with_capacity(records.len());
        for (i, r) in records.iter().enumerate() {
            if r.id.is_empty() {
                return Err(DataError::EmptyId(i));
            }
            if !seen.insert(r.id.as_str()) {
                return Err(DataError::DuplicateId(r.id.clone()));
            }
            let kind_ok = match (&task, &r.true_output) {
                (Task::Classification, Output::Label(_)) => true,
                (Task::Regression { metric, .. }, Output::Vector(v)) => {
                    !v.is_empty()
                        && (*metric != RegressionMetric::PointDistance || v.len() % 2 == 0)
                }
                _ => false,
            };
            let pred_ok = r
                .predicted_output
                .as_ref()
                .is_none_or(|p| p.same_kind(&r.true_output));
            if !kind_ok || !pred_ok {
                return Err(DataError::MixedOutputKinds(r.id.clone()));
            }
        }
        Ok(Self { records, task })
    }

    pub fn records(&self) -> &[ImageRecord] {
        &self.records
    }

    pub fn task(&self) -> Task {
        self.task
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&ImageRecord> {
        self.records.iter().find(|r| r.id == id)
    }

    /// Keeps the records whose id is in `ids`, preserving dataset order.
    pub fn restrict(&self, ids: &[String]) -> Dataset {
        let keep: HashSet<&str> = ids.iter().map(String::as_str).collect();
        Dataset {
            records: self.records.iter().filter(|r| keep.contains(r.id.as_str())).cloned().collect(),
            task: self.task,
        }
    }

    /// id → scenario tag (None for untagged records).
    pub fn scenario_map(&self) -> HashMap<String, Option<String>> {
        self.records.iter().map(|r| (r.id.clone(), r.scenario.clone())).collect()
    }
}

#[derive(Debug, Deserialize)]
struct TaskSidecar {
    task: String,
    metric: Option<RegressionMetric>,
    threshold: Option<f64>,
}

impl TaskSidecar {
    fn into_task(self) -> Result<Task> {
        match self.task.as_str() {
            "classification" => Ok(Task::Classification),
            "regression" => {
                let threshold = self
                    .threshold
                    .ok_or_else(|| DataError::InvalidSidecar("regression needs a threshold".into()))?;
                let task = Task::Regression {
                    threshold,
                    metric: self.metric.unwrap_or(RegressionMetric::SquaredError),
                };
                task.validate()?;
                Ok(task)
            }
            other => Err(DataError::InvalidSidecar(format!("unknown task `{other}`"))),
        }
    }
}

/// Sidecar path for a manifest: same stem, `.json` extension.
pub fn sidecar_path(manifest: &Path) -> PathBuf {
    manifest.with_extension("json")
}

pub fn write_task_sidecar(manifest: &Path, task: Task) -> Result<()> {
    let value = match task {
        Task::Classification => serde_json::json!({ "task": "classification" }),
        Task::Regression { threshold, metric } => serde_json::json!({
            "task": "regression",
            "metric": metric,
            "threshold": threshold,
        }),
    };
    fs::write(sidecar_path(manifest), serde_json::to_vec_pretty(&value).expect("json"))?;
    Ok(())
}

/// Reads a manifest and its optional task sidecar.
pub fn load_manifest(path: &Path) -> Result<Dataset> {
    if !path.is_file() {
        return Err(DataError::MissingFile(path.to_path_buf()));
    }
    let sidecar = sidecar_path(path);
    let task = if sidecar.is_file() && sidecar != path {
        let raw = fs::read(&sidecar)?;
        let parsed: TaskSidecar =
            serde_json::from_slice(&raw).map_err(|e| DataError::InvalidSidecar(e.to_string()))?;
        parsed.into_task()?
    } else {
        Task::Classification
    };
    load_manifest_with_task(path, task)
}

pub fn load_manifest_with_task(path: &Path, task: Task) -> Result<Dataset> {
    task.validate()?;
    if !path.is_file() {
        return Err(DataError::MissingFile(path.to_path_buf()));
    }
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path).map_err(csv_err)?;
    let headers = reader.headers().map_err(csv_err)?.clone();
    let names: Vec<&str> = headers.iter().map(str::trim).collect();
    if names != MANIFEST_HEADER {
        return Err(DataError::ParseError {
            line: 1,
            message: format!("expected header `{}`, found `{}`", MANIFEST_HEADER.join(","), names.join(",")),
        });
    }
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for row in reader.records() {
        let row = row.map_err(csv_err)?;
        let line = row.position().map_or(0, |p| p.line() as usize);
        let field = |i: usize| row.get(i).unwrap_or("").trim();
        let id = field(0).to_string();
        if id.is_empty() {
            return Err(DataError::ParseError { line, message: "empty id".into() });
        }
        if !seen.insert(id.clone()) {
            return Err(DataError::DuplicateId(id));
        }
        let parse_output = |s: &str| -> Result<Output> {
            match task {
                Task::Classification => Ok(Output::Label(s.to_string())),
                Task::Regression { .. } => parse_vector(s)
                    .map(Output::Vector)
                    .map_err(|message| DataError::ParseError { line, message }),
            }
        };
        let true_output = parse_output(field(2))?;
        let pred_field = field(3);
        let predicted_output = if pred_field.is_empty() { None } else { Some(parse_output(pred_field)?) };
        if let Some(p) = &predicted_output {
            if !p.same_kind(&true_output) {
                return Err(DataError::MixedOutputKinds(id));
            }
        }
        let path_field = field(1);
        let scenario = field(4);
        records.push(ImageRecord {
            id,
            path: (!path_field.is_empty()).then(|| path_field.to_string()),
            true_output,
            predicted_output,
            scenario: (!scenario.is_empty()).then(|| scenario.to_string()),
        });
    }
    Dataset::new(records, task)
}

fn parse_vector(s: &str) -> std::result::Result<Vec<f64>, String> {
    if s.is_empty() {
        return Err("empty numeric vector".into());
    }
    s.split(';')
        .map(|t| {
            let v: f64 = t.trim().parse().map_err(|_| format!("not a number: `{t}`"))?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(format!("non-finite value `{t}`"))
            }
        })
        .collect()
}

fn csv_err(e: csv::Error) -> DataError {
    let line = e.position().map_or(0, |p| p.line() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => DataError::Io(io),
        other => DataError::ParseError { line, message: format!("{other:?}") },
    }
}

/// Writes a dataset as a manifest (plus task sidecar for regression tasks).
pub fn write_manifest(d: &Dataset, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(MANIFEST_HEADER).map_err(csv_err)?;
    for r in d.records() {
        w.write_record([
            r.id.as_str(),
            r.path.as_deref().unwrap_or(""),
            &r.true_output.to_field(),
            &r.predicted_output.as_ref().map(Output::to_field).unwrap_or_default(),
            r.scenario.as_deref().unwrap_or(""),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    if let Task::Regression { .. } = d.task() {
        write_task_sidecar(path, d.task())?;
    }
    Ok(())
}

/// Per-image features: one row per id, all entries finite.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    ids: Vec<String>,
    values: Array2<f64>,
}

impl FeatureMatrix {
    pub fn new(ids: Vec<String>, values: Array2<f64>) -> Result<Self> {
        if values.nrows() != ids.len() {
            return Err(DataError::RaggedRow { row: ids.len(), found: values.nrows(), expected: ids.len() });
        }
        if values.ncols() == 0 {
            return Err(DataError::NoColumns);
        }
        let mut seen = HashSet::with_capacity(ids.len());
        for (i, id) in ids.iter().enumerate() {
            if id.is_empty() {
                return Err(DataError::EmptyId(i));
            }
            if !seen.insert(id.as_str()) {
                return Err(DataError::DuplicateId(id.clone()));
            }
        }
        for ((row, col), v) in values.indexed_iter() {
            if !v.is_finite() {
                return Err(DataError::NonFiniteValue { row, col });
            }
        }
        Ok(Self { ids, values })
    }

    pub fn from_rows(ids: Vec<String>, rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut flat = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(DataError::RaggedRow { row: i, found: r.len(), expected: cols });
            }
            flat.extend_from_slice(r);
        }
        let values = Array2::from_shape_vec((rows.len(), cols), flat).expect("shape checked");
        Self::new(ids, values)
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn values(&self) -> ArrayView2<'_, f64> {
        self.values.view()
    }

    pub fn into_values(self) -> Array2<f64> {
        self.values
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.values.row(i)
    }

    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.values.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Rows for `ids`, in that order.
    pub fn select(&self, ids: &[String]) -> Result<FeatureMatrix> {
        let index: HashMap<&str, usize> = self.ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
        let mut out = Array2::zeros((ids.len(), self.ncols()));
        for (r, id) in ids.iter().enumerate() {
            let src = *index.get(id.as_str()).ok_or_else(|| DataError::MissingFeatures(id.clone()))?;
            out.row_mut(r).assign(&self.values.row(src));
        }
        Ok(FeatureMatrix { ids: ids.to_vec(), values: out })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureFormat {
    Csv,
    Fmx1,
}

impl FeatureFormat {
    /// `.fmx`/`.fmx1` → FMX1, anything else → CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
            Some("fmx") | Some("fmx1") => FeatureFormat::Fmx1,
            _ => FeatureFormat::Csv,
        }
    }
}

/// Loads a feature matrix; the format is sniffed from the magic bytes.
pub fn load_feature_matrix(path: &Path) -> Result<FeatureMatrix> {
    if !path.is_file() {
        return Err(DataError::MissingFile(path.to_path_buf()));
    }
    let bytes = fs::read(path)?;
    if bytes.starts_with(FMX1_MAGIC) {
        decode_fmx1(&bytes)
    } else {
        parse_feature_csv(&bytes)
    }
}

fn parse_feature_csv(bytes: &[u8]) -> Result<FeatureMatrix> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(bytes);
    let headers = reader.headers().map_err(csv_err)?.clone();
    if headers.get(0).map(str::trim) != Some("id") {
        return Err(DataError::ParseError { line: 1, message: "first column must be `id`".into() });
    }
    let cols = headers.len() - 1;
    if cols == 0 {
        return Err(DataError::NoColumns);
    }
    let mut ids = Vec::new();
    let mut flat = Vec::new();
    for (row, rec) in reader.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        if rec.len() != cols + 1 {
            return Err(DataError::RaggedRow { row, found: rec.len().saturating_sub(1), expected: cols });
        }
        ids.push(rec[0].trim().to_string());
        for col in 0..cols {
            let field = rec[col + 1].trim();
            let v: f64 = field.parse().map_err(|_| DataError::ParseError {
                line: rec.position().map_or(0, |p| p.line() as usize),
                message: format!("not a number: `{field}`"),
            })?;
            if !v.is_finite() {
                return Err(DataError::NonFiniteValue { row, col });
            }
            flat.push(v);
        }
    }
    let values = Array2::from_shape_vec((ids.len(), cols), flat).expect("shape checked");
    FeatureMatrix::new(ids, values)
}

fn decode_fmx1(bytes: &[u8]) -> Result<FeatureMatrix> {
    let mut cur = ByteCursor { bytes, pos: 4 };
    let n = cur.u64()? as usize;
    let m = cur.u64()? as usize;
    let count = n.checked_mul(m).ok_or_else(|| DataError::Malformed("size overflow".into()))?;
    if count.checked_mul(8).is_none_or(|b| b > bytes.len()) {
        return Err(DataError::Malformed("truncated value block".into()));
    }
    let mut flat = Vec::with_capacity(count);
    for _ in 0..count {
        flat.push(f64::from_le_bytes(cur.take::<8>()?));
    }
    let mut ids = Vec::with_capacity(n);
    for _ in 0..n {
        let len = u32::from_le_bytes(cur.take::<4>()?) as usize;
        let raw = cur.slice(len)?;
        ids.push(String::from_utf8(raw.to_vec()).map_err(|_| DataError::Malformed("id is not UTF-8".into()))?);
    }
    if cur.pos != bytes.len() {
        return Err(DataError::Malformed("trailing bytes".into()));
    }
    let values = Array2::from_shape_vec((n, m), flat).expect("shape checked");
    FeatureMatrix::new(ids, values)
}

struct ByteCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteCursor<'a> {
    fn slice(&mut self, len: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(len).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| DataError::Malformed("unexpected end of file".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn take<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.slice(N)?.try_into().expect("length checked"))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take::<8>()?))
    }
}

pub fn encode_fmx1(m: &FeatureMatrix) -> Vec<u8> {
    let id_bytes: usize = m.ids.iter().map(|s| 4 + s.len()).sum();
    let mut out = Vec::with_capacity(20 + m.nrows() * m.ncols() * 8 + id_bytes);
    out.extend_from_slice(FMX1_MAGIC);
    out.extend_from_slice(&(m.nrows() as u64).to_le_bytes());
    out.extend_from_slice(&(m.ncols() as u64).to_le_bytes());
    for v in m.values.iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for id in &m.ids {
        out.extend_from_slice(&(id.len() as u32).to_le_bytes());
        out.extend_from_slice(id.as_bytes());
    }
    out
}

pub fn write_feature_matrix(m: &FeatureMatrix, path: &Path, format: FeatureFormat) -> Result<()> {
    if m.is_empty() {
        return Err(DataError::EmptyMatrix);
    }
    match format {
        FeatureFormat::Fmx1 => fs::write(path, encode_fmx1(m))?,
        FeatureFormat::Csv => {
            let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
            let mut header = vec!["id".to_string()];
            header.extend((0..m.ncols()).map(|j| format!("f{j}")));
            w.write_record(&header).map_err(csv_err)?;
            for (i, id) in m.ids.iter().enumerate() {
                let mut rec = Vec::with_capacity(m.ncols() + 1);
                rec.push(id.clone());
                // `Display` for f64 is the shortest string that parses back to the same bits
                rec.extend(m.values.row(i).iter().map(|v| v.to_string()));
                w.write_record(&rec).map_err(csv_err)?;
            }
            w.flush()?;
        }
    }
    Ok(())
}

/// Whether a record is a DNN failure; `None` when it has no prediction yet.
pub fn is_failing(record: &ImageRecord, task: Task) -> Option<bool> {
    let pred = record.predicted_output.as_ref()?;
    Some(match (task, &record.true_output, pred) {
        (Task::Classification, t, p) => t != p,
        (Task::Regression { threshold, metric }, Output::Vector(t), Output::Vector(p)) => match metric {
            RegressionMetric::SquaredError => {
                let se: f64 = t.iter().zip(p).map(|(a, b)| (b - a) * (b - a)).sum();
                se > threshold
            }
            RegressionMetric::PointDistance => t
                .chunks_exact(2)
                .zip(p.chunks_exact(2))
                .any(|(a, b)| ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt() > threshold),
        },
        // kinds are validated at construction
        _ => true,
    })
}

/// Ids of failure-inducing records, in dataset order.
pub fn label_failures(d: &Dataset) -> Vec<String> {
    d.records()
        .iter()
        .filter(|r| is_failing(r, d.task()) == Some(true))
        .map(|r| r.id.clone())
        .collect()
}

/// Failure-inducing records together with their features, aligned by id.
#[derive(Debug, Clone, PartialEq)]
pub struct FailureSet {
    dataset: Dataset,
    features: FeatureMatrix,
}

impl FailureSet {
    /// Pairs records with features, reordering feature rows to record order.
    pub fn new(dataset: Dataset, features: &FeatureMatrix) -> Result<Self> {
        let ids: Vec<String> = dataset.records().iter().map(|r| r.id.clone()).collect();
        let features = features.select(&ids)?;
        Ok(Self { dataset, features })
    }

    /// Restricts `d` to its failing records and aligns `features` to them.
    pub fn from_dataset(d: &Dataset, features: &FeatureMatrix) -> Result<Self> {
        Self::new(d.restrict(&label_failures(d)), features)
    }

    pub fn dataset(&self) -> &Dataset {
        &self.dataset
    }

    pub fn features(&self) -> &FeatureMatrix {
        &self.features
    }

    pub fn ids(&self) -> &[String] {
        self.features.ids()
    }

    pub fn len(&self) -> usize {
        self.dataset.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dataset.is_empty()
    }

    /// Scenario tags aligned with `ids()`.
    pub fn scenarios(&self) -> Vec<Option<String>> {
        self.dataset.records().iter().map(|r| r.scenario.clone()).collect()
    }
}

/// Writes bytes atomically (temp file in the same directory, then rename).
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let tmp = path.with_extension("tmp~");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(tmp, path)
}
