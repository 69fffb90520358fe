//! Per-layer heatmaps: normalization, heatmap distance, ICD/WICD and
//! minimal-WICD layer selection.
//!
//! A layer's heatmaps are stored as one `N x (rows * cols)` matrix whose row
//! `i` is the row-major flattening of image `i`'s `rows x cols` heatmap. On
//! disk each layer is an FMX1 file listed in a JSON index:
//!
//! ```json
//! {"layers": [{"name": "conv5", "rows": 14, "cols": 14, "file": "conv5.fmx"}],
//!  "ids": ["img0", "img1"]}
//! ```

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::Path;

use ndarray::{Array2, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clustering::{knee_point, ward_linkage, ClusterError, KneeInput, Labels};
use crate::data::{self, DataError, FeatureFormat, FeatureMatrix};

#[derive(Debug, Error)]
pub enum HeatmapError {
    #[error("layer `{0}` not found")]
    LayerNotFound(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("assignment has no clusters")]
    EmptyAssignment,
    #[error("need at least {needed} images, got {got}")]
    TooFewImages { needed: usize, got: usize },
    #[error("invalid heatmap index: {0}")]
    InvalidIndex(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Cluster(#[from] ClusterError),
    #[error("no heatmaps for image `{0}`")]
    MissingImage(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = HeatmapError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq)]
pub struct HeatmapLayer {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    /// `N x (rows * cols)`, row-major flattened heatmaps.
    pub data: Array2<f64>,
}

impl HeatmapLayer {
    /// Heatmap of image `i` as a `rows x cols` view.
    pub fn heatmap(&self, i: usize) -> ArrayView2<'_, f64> {
        self.data.row(i).into_shape_with_order((self.rows, self.cols)).expect("row holds rows * cols values")
    }
}

/// Heatmaps of every layer for a collection of images.
#[derive(Debug, Clone, PartialEq)]
pub struct HeatmapSet {
    ids: Vec<String>,
    layers: Vec<HeatmapLayer>,
}

/// All layers of one image.
#[derive(Debug, Clone)]
pub struct HeatmapStack<'a> {
    pub image_id: &'a str,
    pub layers: Vec<(&'a str, ArrayView2<'a, f64>)>,
}

#[derive(Debug, Serialize, Deserialize)]
struct IndexFile {
    layers: Vec<IndexLayer>,
    ids: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct IndexLayer {
    name: String,
    rows: usize,
    cols: usize,
    file: String,
}

impl HeatmapSet {
    pub fn new(ids: Vec<String>, layers: Vec<HeatmapLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(HeatmapError::InvalidIndex("no layers".into()));
        }
        let mut names = HashSet::new();
        for l in &layers {
            if !names.insert(l.name.as_str()) {
                return Err(HeatmapError::InvalidIndex(format!("duplicate layer `{}`", l.name)));
            }
            if l.rows == 0 || l.cols == 0 || l.data.dim() != (ids.len(), l.rows * l.cols) {
                return Err(HeatmapError::DimensionMismatch(format!(
                    "layer `{}` is {:?}, expected {} x {}",
                    l.name,
                    l.data.dim(),
                    ids.len(),
                    l.rows * l.cols
                )));
            }
            if let Some(pos) = l.data.iter().position(|v| !v.is_finite()) {
                let w = l.rows * l.cols;
                return Err(DataError::NonFiniteValue { row: pos / w, col: pos % w }.into());
            }
        }
        Ok(Self { ids, layers })
    }

    pub fn load(index: &Path) -> Result<Self> {
        let text = fs::read_to_string(index).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => DataError::MissingFile(index.to_path_buf()).into(),
            _ => HeatmapError::Io(e),
        })?;
        let idx: IndexFile = serde_json::from_str(&text).map_err(|e| HeatmapError::InvalidIndex(e.to_string()))?;
        let base = index.parent().unwrap_or(Path::new("."));
        let mut layers = Vec::with_capacity(idx.layers.len());
        for l in idx.layers {
            let m = data::load_feature_matrix(&base.join(&l.file))?;
            if m.ids() != idx.ids.as_slice() {
                return Err(HeatmapError::InvalidIndex(format!("ids of `{}` differ from the index", l.file)));
            }
            layers.push(HeatmapLayer { name: l.name, rows: l.rows, cols: l.cols, data: m.into_values() });
        }
        Self::new(idx.ids, layers)
    }

    /// Writes `<dir>/<layer>.fmx` files and `<dir>/index.json`; returns the index path.
    pub fn write(&self, dir: &Path) -> Result<std::path::PathBuf> {
        fs::create_dir_all(dir)?;
        let mut entries = Vec::new();
        for l in &self.layers {
            let file = format!("{}.fmx", l.name);
            let m = FeatureMatrix::new(self.ids.clone(), l.data.clone())?;
            data::write_feature_matrix(&m, &dir.join(&file), FeatureFormat::Fmx1)?;
            entries.push(IndexLayer { name: l.name.clone(), rows: l.rows, cols: l.cols, file });
        }
        let index = dir.join("index.json");
        let json = serde_json::to_string_pretty(&IndexFile { layers: entries, ids: self.ids.clone() })
            .expect("index serializes");
        fs::write(&index, json)?;
        Ok(index)
    }

    /// Keeps the images in `ids`, in that order.
    pub fn restrict(&self, ids: &[String]) -> Result<Self> {
        let pos: HashMap<&str, usize> = self.ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
        let rows = ids
            .iter()
            .map(|id| pos.get(id.as_str()).copied().ok_or_else(|| HeatmapError::MissingImage(id.clone())))
            .collect::<Result<Vec<usize>>>()?;
        let layers = self
            .layers
            .iter()
            .map(|l| HeatmapLayer { data: l.data.select(Axis(0), &rows), ..l.clone() })
            .collect();
        Self::new(ids.to_vec(), layers)
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn layers(&self) -> &[HeatmapLayer] {
        &self.layers
    }

    pub fn layer(&self, name: &str) -> Result<&HeatmapLayer> {
        self.layers.iter().find(|l| l.name == name).ok_or_else(|| HeatmapError::LayerNotFound(name.into()))
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn stack(&self, i: usize) -> HeatmapStack<'_> {
        HeatmapStack {
            image_id: &self.ids[i],
            layers: self.layers.iter().map(|l| (l.name.as_str(), l.heatmap(i))).collect(),
        }
    }
}

/// Min-max normalizes a layer with the minimum and maximum taken over every
/// image; a constant layer maps to zeros.
pub fn normalize_heatmaps(set: &HeatmapSet, layer: &str) -> Result<Array2<f64>> {
    Ok(normalize(&set.layer(layer)?.data))
}

fn normalize(data: &Array2<f64>) -> Array2<f64> {
    let (lo, hi) = data.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let range = hi - lo;
    if range > 0.0 {
        data.mapv(|v| (v - lo) / range)
    } else {
        Array2::zeros(data.dim())
    }
}

/// Frobenius distance between two equally shaped heatmaps.
pub fn heatmap_distance(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(HeatmapError::DimensionMismatch(format!("{:?} vs {:?}", a.dim(), b.dim())));
    }
    Ok(flat_distance(a.iter(), b.iter()))
}

fn flat_distance<'a>(a: impl Iterator<Item = &'a f64>, b: impl Iterator<Item = &'a f64>) -> f64 {
    a.zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Mean pairwise heatmap distance inside a cluster; 0 for a singleton.
pub fn icd(members: &[ArrayView2<'_, f64>]) -> Result<f64> {
    for m in members.iter().skip(1) {
        if m.dim() != members[0].dim() {
            return Err(HeatmapError::DimensionMismatch(format!("{:?} vs {:?}", m.dim(), members[0].dim())));
        }
    }
    Ok(icd_rows(&members.iter().map(|m| m.as_standard_layout().iter().copied().collect::<Vec<_>>()).collect::<Vec<_>>()))
}

fn icd_rows<R: AsRef<[f64]>>(rows: &[R]) -> f64 {
    let n = rows.len();
    if n < 2 {
        return 0.0;
    }
    let mut sum = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            sum += flat_distance(rows[i].as_ref().iter(), rows[j].as_ref().iter());
        }
    }
    sum / (n * (n - 1) / 2) as f64
}

/// `(sum_j ICD(C_j) * |C_j| / |C|) / #clusters` over the clusters of
/// `labels`, with `|C|` the number of clustered (non-noise) images; `data` is
/// the flattened heatmap matrix aligned with `labels`.
pub fn wicd(labels: &Labels, data: ArrayView2<'_, f64>) -> Result<f64> {
    if labels.len() != data.nrows() {
        return Err(HeatmapError::DimensionMismatch(format!(
            "{} labels for {} heatmaps",
            labels.len(),
            data.nrows()
        )));
    }
    let members = labels.members();
    if members.is_empty() {
        return Err(HeatmapError::EmptyAssignment);
    }
    let total: usize = members.iter().map(Vec::len).sum();
    let weighted: f64 = members
        .iter()
        .map(|m| {
            let rows: Vec<Vec<f64>> = m.iter().map(|&i| data.row(i).to_vec()).collect();
            icd_rows(&rows) * m.len() as f64 / total as f64
        })
        .sum();
    Ok(weighted / members.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerScore {
    pub layer: String,
    pub n_clusters: usize,
    pub wicd: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerSelection {
    pub layer: String,
    pub scores: Vec<LayerScore>,
    /// Normalized, flattened heatmaps of the selected layer.
    pub features: FeatureMatrix,
}

/// Clusters every layer's normalized heatmaps with Ward HAC and returns the
/// layer of minimal WICD (earliest layer on ties).
///
/// The cluster count of a layer is the knee of its merge-height curve
/// `k -> height of the merge leaving k clusters`, `k = 1..N-1`. With fewer
/// than four images, or a flat curve, the layer is scored as one cluster.
pub fn select_layer(set: &HeatmapSet) -> Result<LayerSelection> {
    if set.len() < 2 {
        return Err(HeatmapError::TooFewImages { needed: 2, got: set.len() });
    }
    let scored: Vec<Result<(LayerScore, Array2<f64>)>> = set
        .layers
        .par_iter()
        .map(|l| {
            let norm = normalize(&l.data);
            let labels = layer_clusters(norm.view())?;
            let score = LayerScore { layer: l.name.clone(), n_clusters: labels.n_clusters(), wicd: wicd(&labels, norm.view())? };
            Ok((score, norm))
        })
        .collect();
    let (scores, mut norms): (Vec<LayerScore>, Vec<Array2<f64>>) =
        scored.into_iter().collect::<Result<Vec<_>>>()?.into_iter().unzip();
    let mut best = 0;
    for (i, s) in scores.iter().enumerate() {
        if s.wicd < scores[best].wicd {
            best = i;
        }
    }
    Ok(LayerSelection {
        layer: scores[best].layer.clone(),
        features: FeatureMatrix::new(set.ids.clone(), norms.swap_remove(best))?,
        scores,
    })
}

fn layer_clusters(x: ArrayView2<'_, f64>) -> Result<Labels> {
    let n = x.nrows();
    let dendrogram = ward_linkage(x)?;
    if n < 4 {
        return Ok(dendrogram.cut(1)?);
    }
    let ks: Vec<f64> = (1..n).map(|k| k as f64).collect();
    let hs: Vec<f64> = (1..n).map(|k| dendrogram.merges[n - 1 - k].height).collect();
    let k = match knee_point(&KneeInput::new(ks, hs)?) {
        Ok(i) => i + 1,
        Err(ClusterError::ConstantCurve) => 1,
        Err(e) => return Err(e.into()),
    };
    Ok(dendrogram.cut(k)?)
}
