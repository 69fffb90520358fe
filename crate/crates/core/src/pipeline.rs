//! Pipelines (feature source, dimensionality reduction, clusterer), the
//! pipeline grid and report tables.

use std::cmp::Ordering;
use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clustering::{
    hdbscan, select_eps_with, select_k, select_min_pts_with, ClusterAssignment, ClusterError, DistanceMatrix,
    Labels, DEFAULT_K_RANGE, DEFAULT_MIN_PTS_RANGE,
};
use crate::data::{self, DataError, FailureSet, FeatureMatrix};
use crate::dimred::{pca_fit_transform, umap_fit_transform, DimredError, UmapParams};
use crate::faultgen::{resize_bilinear, FaultError, Raster};
use crate::heatmap::{select_layer, HeatmapError, HeatmapSet};
use crate::metrics::{evaluate, EvaluationReport, MetricsError, DEFAULT_COVERAGE_THRESHOLD};
use crate::rng::derive_seed_str;

pub const DEFAULT_PCA_COMPONENTS: usize = 10;
pub const DEFAULT_MIN_CLUSTER_SIZE: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Features,
    Dimred,
    Clustering,
    Metrics,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Features => "features",
            Stage::Dimred => "dimred",
            Stage::Clustering => "clustering",
            Stage::Metrics => "metrics",
        })
    }
}

#[derive(Debug, Error)]
pub enum StageError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Heatmap(#[from] HeatmapError),
    #[error(transparent)]
    Image(#[from] FaultError),
    #[error(transparent)]
    Dimred(#[from] DimredError),
    #[error(transparent)]
    Cluster(#[from] ClusterError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    /// An error shared by several grid cells.
    #[error("{0}")]
    Shared(String),
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("failure set is empty")]
    EmptyFailureSet,
    #[error("no feature sources given")]
    NoSources,
    #[error("no results to report")]
    NoResults,
    #[error("{stage} stage: {source}")]
    Stage {
        stage: Stage,
        #[source]
        source: StageError,
    },
    #[error("invalid pipeline: {0}")]
    InvalidSpec(String),
    #[error("report: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl PipelineError {
    pub fn stage(&self) -> Option<Stage> {
        match self {
            PipelineError::Stage { stage, .. } => Some(*stage),
            _ => None,
        }
    }
}

pub type Result<T, E = PipelineError> = std::result::Result<T, E>;

fn at<E: Into<StageError>>(stage: Stage) -> impl FnOnce(E) -> PipelineError {
    move |e| PipelineError::Stage { stage, source: e.into() }
}

/// Where the per-image feature vectors come from.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeatureSource {
    /// The features already held by the failure set.
    Provided,
    /// A CSV or FMX1 feature matrix.
    File { path: PathBuf },
    /// A heatmap index; features are the normalized heatmaps of the layer with minimal WICD.
    HuddHeatmaps { path: PathBuf },
    /// Center-cropped grayscale pixels downscaled to `side x side`. Relative
    /// image paths resolve against `root`. Not a learned representation.
    RawPixels {
        side: usize,
        #[serde(default)]
        root: Option<PathBuf>,
    },
}

impl FeatureSource {
    pub fn label(&self) -> String {
        match self {
            FeatureSource::Provided => "provided".into(),
            FeatureSource::File { path } => format!("file:{}", path.display()),
            FeatureSource::HuddHeatmaps { path } => format!("hudd:{}", path.display()),
            FeatureSource::RawPixels { side, .. } => format!("raw:{side}"),
        }
    }

    pub fn is_raw_pixels(&self) -> bool {
        matches!(self, FeatureSource::RawPixels { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Dimred {
    None,
    Pca { n_components: usize },
    Umap(UmapParams),
}

impl Dimred {
    pub const ALL: [&'static str; 3] = ["none", "pca", "umap"];

    pub fn pca() -> Self {
        Dimred::Pca { n_components: DEFAULT_PCA_COMPONENTS }
    }

    pub fn umap() -> Self {
        Dimred::Umap(UmapParams::default())
    }

    /// `none`, `pca` or `umap` with default settings.
    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "none" => Some(Dimred::None),
            "pca" => Some(Dimred::pca()),
            "umap" => Some(Dimred::umap()),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Dimred::None => "none",
            Dimred::Pca { .. } => "pca",
            Dimred::Umap(_) => "umap",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Clusterer {
    /// K-means with K at the knee of the SSD curve over `k_min..=k_max`.
    KMeansAuto { k_min: usize, k_max: usize },
    /// DBSCAN with eps from the NN-distance knee and MinPts by silhouette.
    DbscanAuto { min_pts_min: usize, min_pts_max: usize },
    Hdbscan { min_cluster_size: usize },
}

impl Clusterer {
    pub fn kmeans() -> Self {
        Clusterer::KMeansAuto { k_min: *DEFAULT_K_RANGE.start(), k_max: *DEFAULT_K_RANGE.end() }
    }

    pub fn dbscan() -> Self {
        Clusterer::DbscanAuto { min_pts_min: *DEFAULT_MIN_PTS_RANGE.start(), min_pts_max: *DEFAULT_MIN_PTS_RANGE.end() }
    }

    pub fn hdbscan() -> Self {
        Clusterer::Hdbscan { min_cluster_size: DEFAULT_MIN_CLUSTER_SIZE }
    }

    /// `kmeans`, `dbscan` or `hdbscan` with default settings.
    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "kmeans" => Some(Self::kmeans()),
            "dbscan" => Some(Self::dbscan()),
            "hdbscan" => Some(Self::hdbscan()),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Clusterer::KMeansAuto { .. } => "kmeans",
            Clusterer::DbscanAuto { .. } => "dbscan",
            Clusterer::Hdbscan { .. } => "hdbscan",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineSpec {
    pub feature_source: FeatureSource,
    pub dimred: Dimred,
    pub clusterer: Clusterer,
    pub seed: u64,
}

impl PipelineSpec {
    pub fn label(&self) -> String {
        format!("{}/{}/{}", self.feature_source.label(), self.dimred.name(), self.clusterer.name())
    }
}

/// Hyperparameters picked by the automatic selection routines.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub layer: Option<String>,
    pub k: Option<usize>,
    pub eps: Option<f64>,
    pub min_pts: Option<usize>,
    pub min_cluster_size: Option<usize>,
}

impl fmt::Display for Selection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut parts = Vec::new();
        if let Some(l) = &self.layer {
            parts.push(format!("layer={l}"));
        }
        if let Some(k) = self.k {
            parts.push(format!("k={k}"));
        }
        if let Some(e) = self.eps {
            parts.push(format!("eps={e}"));
        }
        if let Some(m) = self.min_pts {
            parts.push(format!("min_pts={m}"));
        }
        if let Some(m) = self.min_cluster_size {
            parts.push(format!("min_cluster_size={m}"));
        }
        f.write_str(&parts.join(";"))
    }
}

/// Wall-clock seconds per stage.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub features: f64,
    pub dimred: f64,
    pub clustering: f64,
    pub metrics: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineResult {
    pub spec: PipelineSpec,
    pub assignment: ClusterAssignment,
    pub selection: Selection,
    /// `None` when the failure set holds no injected scenario.
    pub report: Option<EvaluationReport>,
    pub timings: StageTimings,
}

impl PipelineResult {
    /// Equality of everything except timings.
    pub fn same_outcome(&self, other: &Self) -> bool {
        self.spec == other.spec
            && self.assignment == other.assignment
            && self.selection == other.selection
            && self.report == other.report
    }
}

/// Loads or computes the features of `source` for the images of `fs`.
pub fn resolve_features(source: &FeatureSource, fs: &FailureSet) -> Result<(FeatureMatrix, Option<String>)> {
    let err = at::<StageError>(Stage::Features);
    match source {
        FeatureSource::Provided => Ok((fs.features().clone(), None)),
        FeatureSource::File { path } => {
            let m = data::load_feature_matrix(path).map_err(|e| err(e.into()))?;
            Ok((m.select(fs.ids()).map_err(at(Stage::Features))?, None))
        }
        FeatureSource::HuddHeatmaps { path } => {
            let sel = HeatmapSet::load(path)
                .and_then(|set| set.restrict(fs.ids()))
                .and_then(|set| select_layer(&set))
                .map_err(|e| err(e.into()))?;
            Ok((sel.features, Some(sel.layer)))
        }
        FeatureSource::RawPixels { side, root } => {
            Ok((raw_pixel_features(fs, *side, root.as_deref()).map_err(err)?, None))
        }
    }
}

fn raw_pixel_features(fs: &FailureSet, side: usize, root: Option<&Path>) -> Result<FeatureMatrix, StageError> {
    if side == 0 {
        return Err(FaultError::InvalidParameter("raw pixel side must be positive".into()).into());
    }
    let rows: Vec<Vec<f64>> = fs
        .dataset()
        .records()
        .par_iter()
        .map(|r| {
            let rel = r.path.as_deref().ok_or_else(|| DataError::Malformed(format!("image `{}` has no path", r.id)))?;
            let path = match root {
                Some(root) => root.join(rel),
                None => PathBuf::from(rel),
            };
            Ok(raw_pixels(&Raster::load(&path)?, side))
        })
        .collect::<Result<_, StageError>>()?;
    Ok(FeatureMatrix::from_rows(fs.ids().to_vec(), &rows)?)
}

/// Center square crop, downscale, then luma in [0, 1].
fn raw_pixels(img: &Raster, side: usize) -> Vec<f64> {
    let s = img.width().min(img.height());
    let (x0, y0) = ((img.width() - s) / 2, (img.height() - s) / 2);
    let mut crop = Vec::with_capacity(s * s * 3);
    for y in y0..y0 + s {
        for x in x0..x0 + s {
            crop.extend_from_slice(&img.get(x, y));
        }
    }
    let crop = Raster::new(s, s, crop).expect("non-empty crop");
    let small = resize_bilinear(&crop, side, side);
    small
        .pixels()
        .chunks_exact(3)
        .map(|p| (0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64) / 255.0)
        .collect()
}

/// Runs one pipeline on `fs`.
pub fn run_pipeline(spec: &PipelineSpec, fs: &FailureSet) -> Result<PipelineResult> {
    if fs.is_empty() {
        return Err(PipelineError::EmptyFailureSet);
    }
    let t = Instant::now();
    let (features, layer) = resolve_features(&spec.feature_source, fs)?;
    let features_time = t.elapsed().as_secs_f64();
    let mut r = run_on_features(spec, fs, &features)?;
    r.selection.layer = layer;
    r.timings.features = features_time;
    Ok(r)
}

/// Runs the dimensionality reduction, clustering and metric stages of `spec`
/// on already resolved features.
pub fn run_on_features(spec: &PipelineSpec, fs: &FailureSet, features: &FeatureMatrix) -> Result<PipelineResult> {
    if fs.is_empty() {
        return Err(PipelineError::EmptyFailureSet);
    }
    if features.ids() != fs.ids() {
        return Err(PipelineError::InvalidSpec("feature rows are not aligned with the failure set".into()));
    }
    let mut timings = StageTimings::default();
    let n = features.nrows();

    let t = Instant::now();
    let reduced: Array2<f64> = match &spec.dimred {
        Dimred::None => features.values().to_owned(),
        Dimred::Pca { n_components } => {
            let c = (*n_components).min(n).min(features.ncols());
            pca_fit_transform(features, c).map_err(at(Stage::Dimred))?.0.into_values()
        }
        Dimred::Umap(p) => {
            let mut p = *p;
            p.n_neighbors = p.n_neighbors.min(n.saturating_sub(1)).max(1);
            p.seed = derive_seed_str(spec.seed, "umap");
            umap_fit_transform(features, &p).map_err(at(Stage::Dimred))?.into_values()
        }
    };
    timings.dimred = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let (labels, selection) = cluster(&spec.clusterer, reduced, spec.seed).map_err(at(Stage::Clustering))?;
    timings.clustering = t.elapsed().as_secs_f64();
    let assignment = ClusterAssignment::new(fs.ids().to_vec(), labels).map_err(at(Stage::Clustering))?;

    let t = Instant::now();
    let scenarios = fs.dataset().scenario_map();
    let report = match evaluate(&assignment, &scenarios, DEFAULT_COVERAGE_THRESHOLD) {
        Ok(r) => Some(r),
        Err(MetricsError::NoScenarios) => None,
        Err(e) => return Err(at(Stage::Metrics)(e)),
    };
    timings.metrics = t.elapsed().as_secs_f64();

    Ok(PipelineResult { spec: spec.clone(), assignment, selection, report, timings })
}

fn distinct_rows(x: &Array2<f64>) -> usize {
    x.rows().into_iter().map(|r| r.iter().map(|v| v.to_bits()).collect::<Vec<u64>>()).collect::<HashSet<_>>().len()
}

fn cluster(c: &Clusterer, x: Array2<f64>, seed: u64) -> Result<(Labels, Selection), ClusterError> {
    let mut sel = Selection::default();
    let labels = match *c {
        Clusterer::KMeansAuto { k_min, k_max } => {
            // K cannot exceed the number of distinct points
            let k_max = k_max.min(distinct_rows(&x));
            if k_max < k_min + 2 {
                return Err(ClusterError::TooFewSamples { needed: k_min + 2, got: k_max });
            }
            let s = select_k(x.view(), k_min..=k_max, derive_seed_str(seed, "kmeans"))?;
            sel.k = Some(s.k);
            s.result.labels
        }
        Clusterer::DbscanAuto { min_pts_min, min_pts_max } => {
            let d = DistanceMatrix::new(x.view());
            let eps = select_eps_with(&d)?;
            let s = select_min_pts_with(&d, eps, min_pts_min..=min_pts_max)?;
            sel.eps = Some(eps);
            sel.min_pts = Some(s.min_pts);
            s.labels
        }
        Clusterer::Hdbscan { min_cluster_size } => {
            sel.min_cluster_size = Some(min_cluster_size);
            hdbscan(x.view(), min_cluster_size)?
        }
    };
    Ok((labels, sel))
}

/// One grid cell: a result or the error that stopped it.
#[derive(Debug)]
pub struct GridCell {
    pub spec: PipelineSpec,
    pub outcome: Result<PipelineResult>,
}

/// The 3 x 3 stage combinations of every source, each with a sub-seed derived
/// from `seed` and the cell label.
pub fn grid_specs(sources: &[FeatureSource], seed: u64) -> Vec<PipelineSpec> {
    let mut out = Vec::with_capacity(sources.len() * 9);
    for s in sources {
        for d in [Dimred::None, Dimred::pca(), Dimred::umap()] {
            for c in [Clusterer::kmeans(), Clusterer::dbscan(), Clusterer::hdbscan()] {
                let mut spec = PipelineSpec { feature_source: s.clone(), dimred: d.clone(), clusterer: c, seed: 0 };
                spec.seed = derive_seed_str(seed, &spec.label());
                out.push(spec);
            }
        }
    }
    out
}

/// Runs every cell of [`grid_specs`] on up to `jobs` threads (all cores for
/// 0). Each source is resolved once. Failing cells are recorded and do not
/// stop the grid. Cells come back in enumeration order.
pub fn run_grid(sources: &[FeatureSource], fs: &FailureSet, seed: u64, jobs: usize) -> Result<Vec<GridCell>> {
    if sources.is_empty() {
        return Err(PipelineError::NoSources);
    }
    if fs.is_empty() {
        return Err(PipelineError::EmptyFailureSet);
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| PipelineError::InvalidSpec(e.to_string()))?;
    pool.install(|| {
        let resolved: Vec<_> = sources
            .par_iter()
            .map(|s| {
                let t = Instant::now();
                resolve_features(s, fs)
                    .map(|(m, layer)| (m, layer, t.elapsed().as_secs_f64()))
                    .map_err(|e| match e {
                        PipelineError::Stage { source, .. } => source.to_string(),
                        e => e.to_string(),
                    })
            })
            .collect();
        let specs = grid_specs(sources, seed);
        let cells = specs
            .into_par_iter()
            .enumerate()
            .map(|(i, spec)| {
                let outcome = match &resolved[i / 9] {
                    Ok((m, layer, secs)) => run_on_features(&spec, fs, m).map(|mut r| {
                        r.selection.layer = layer.clone();
                        r.timings.features = *secs;
                        r
                    }),
                    Err(e) => Err(PipelineError::Stage { stage: Stage::Features, source: StageError::Shared(e.clone()) }),
                };
                GridCell { spec, outcome }
            })
            .collect();
        Ok(cells)
    })
}

/// One table row per pipeline. Timings are left out so that re-runs give
/// identical tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub source: String,
    pub dimred: String,
    pub clusterer: String,
    pub seed: u64,
    /// Raw-pixel features are a stand-in, not a learned representation.
    pub stand_in: bool,
    pub status: String,
    pub error: String,
    pub n_images: usize,
    pub n_clusters: Option<usize>,
    pub n_noise: Option<usize>,
    pub selection: String,
    pub avg_purity: Option<f64>,
    pub coverage_pct: Option<f64>,
    pub redundancy_ratio: Option<f64>,
    pub savings: Option<f64>,
}

impl ReportRow {
    pub fn new(spec: &PipelineSpec, n_images: usize, outcome: std::result::Result<&PipelineResult, String>) -> Self {
        let mut row = ReportRow {
            source: spec.feature_source.label(),
            dimred: spec.dimred.name().into(),
            clusterer: spec.clusterer.name().into(),
            seed: spec.seed,
            stand_in: spec.feature_source.is_raw_pixels(),
            status: "ok".into(),
            error: String::new(),
            n_images,
            n_clusters: None,
            n_noise: None,
            selection: String::new(),
            avg_purity: None,
            coverage_pct: None,
            redundancy_ratio: None,
            savings: None,
        };
        match outcome {
            Ok(r) => {
                row.n_clusters = Some(r.assignment.n_clusters());
                row.n_noise = Some(r.assignment.labels().n_noise());
                row.selection = r.selection.to_string();
                if let Some(e) = &r.report {
                    row.avg_purity = e.avg_purity;
                    row.coverage_pct = Some(e.coverage_pct);
                    row.redundancy_ratio = e.redundancy_ratio;
                    row.savings = Some(e.savings);
                }
            }
            Err(e) => {
                row.status = "failed".into();
                row.error = e;
            }
        }
        row
    }

    fn key(&self) -> (&str, usize, usize) {
        let pos = |xs: &[&str], v: &str| xs.iter().position(|x| *x == v).unwrap_or(xs.len());
        (&self.source, pos(&Dimred::ALL, &self.dimred), pos(&["kmeans", "dbscan", "hdbscan"], &self.clusterer))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub rows: Vec<ReportRow>,
}

impl Report {
    /// Rows sorted by source label, then dimred (none, pca, umap), then
    /// clusterer (kmeans, dbscan, hdbscan).
    pub fn new(mut rows: Vec<ReportRow>) -> Self {
        rows.sort_by(|a, b| a.key().cmp(&b.key()));
        Self { rows }
    }

    pub fn from_cells(cells: &[GridCell], n_images: usize) -> Self {
        Self::new(
            cells
                .iter()
                .map(|c| ReportRow::new(&c.spec, n_images, c.outcome.as_ref().map_err(|e| e.to_string())))
                .collect(),
        )
    }

    /// The successful row with the highest average purity, then coverage
    /// (earliest row on ties).
    pub fn best(&self) -> Option<&ReportRow> {
        let score = |r: &ReportRow| (r.avg_purity.unwrap_or(f64::NEG_INFINITY), r.coverage_pct.unwrap_or(0.0));
        self.rows.iter().filter(|r| r.status == "ok").fold(None, |best: Option<&ReportRow>, r| match best {
            Some(b) if score(r).partial_cmp(&score(b)) != Some(Ordering::Greater) => Some(b),
            _ => Some(r),
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| PipelineError::Format(e.to_string()))
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self).map_err(|e| PipelineError::Format(e.to_string()))?;
        s.push('\n');
        Ok(s)
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.rows {
            w.serialize(r).map_err(|e| PipelineError::Format(e.to_string()))?;
        }
        let bytes = w.into_inner().map_err(|e| PipelineError::Format(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let rows = r.deserialize().collect::<std::result::Result<_, _>>().map_err(|e| PipelineError::Format(e.to_string()))?;
        Ok(Self { rows })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Json,
    Csv,
}

/// Writes `report` atomically in the given format.
pub fn emit_report(report: &Report, format: ReportFormat, path: &Path) -> Result<()> {
    if report.rows.is_empty() {
        return Err(PipelineError::NoResults);
    }
    let text = match format {
        ReportFormat::Json => report.to_json()?,
        ReportFormat::Csv => report.to_csv()?,
    };
    data::write_atomic(path, text.as_bytes())?;
    Ok(())
}
