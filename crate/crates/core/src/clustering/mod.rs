//! Clustering algorithms and their automated parameter selection.
//!
//! Every algorithm works on an `N x M` [`ArrayView2`] with the Euclidean
//! metric and returns [`Labels`]: `-1` marks noise, clusters are numbered
//! `0..C` in order of first appearance.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use ndarray::ArrayView2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

mod dbscan;
mod hac;
mod hdbscan;
mod kmeans;
mod knee;
mod select;
mod silhouette;

pub use dbscan::{dbscan, dbscan_from_neighbors, neighborhoods, DbscanParams};
pub use hac::{hac_ward, ward_linkage, Dendrogram, Merge};
pub use hdbscan::{hdbscan, hdbscan_tree, CondensedEdge, HdbscanTree};
pub use kmeans::{kmeans, kmeans_with, KMeansConfig, KMeansResult};
pub use knee::{knee_point, knee_point_smoothed, KneeInput};
pub use select::{
    nn_distances, select_eps, select_eps_with, select_k, select_min_pts, select_min_pts_with, KSelection, MinPtsSelection,
    DEFAULT_K_RANGE, DEFAULT_MIN_PTS_RANGE,
};
pub use silhouette::{silhouette, silhouette_from_distances};

/// Label of a point that belongs to no cluster.
pub const NOISE: i32 = -1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ClusterError {
    #[error("k = {k} exceeds the number of distinct points ({distinct})")]
    KTooLarge { k: usize, distinct: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("curve is constant; no knee point")]
    ConstantCurve,
    #[error("invalid curve: {0}")]
    InvalidCurve(String),
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("silhouette needs at least two clusters")]
    TooFewClusters,
    #[error("no MinPts candidate produced two or more clusters")]
    NoValidConfiguration,
    #[error("min_cluster_size {min_cluster_size} is outside [2, {n}]")]
    MinClusterSizeTooLarge { min_cluster_size: usize, n: usize },
    #[error("selected eps is not positive (duplicate points?)")]
    NonPositiveEps,
    #[error("labels are not contiguous: {0}")]
    InvalidLabels(String),
    #[error("{0}")]
    Io(String),
}

pub type Result<T, E = ClusterError> = std::result::Result<T, E>;

/// Per-point cluster labels with contiguous cluster ids.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Labels(Vec<i32>);

impl Labels {
    /// Validates that cluster ids are `0..C` with every id used and noise is `-1`.
    pub fn new(raw: Vec<i32>) -> Result<Self> {
        let max = raw.iter().copied().max().unwrap_or(NOISE);
        if raw.iter().any(|&l| l < NOISE) {
            return Err(ClusterError::InvalidLabels("labels below -1".into()));
        }
        if max >= 0 {
            let mut used = vec![false; max as usize + 1];
            for &l in raw.iter().filter(|&&l| l >= 0) {
                used[l as usize] = true;
            }
            if let Some(gap) = used.iter().position(|u| !u) {
                return Err(ClusterError::InvalidLabels(format!("cluster {gap} is empty")));
            }
        }
        Ok(Self(raw))
    }

    /// Renumbers arbitrary non-negative ids by first appearance; negatives become noise.
    pub fn canonical<I: IntoIterator<Item = i64>>(raw: I) -> Self {
        let mut map = HashMap::new();
        let labels = raw
            .into_iter()
            .map(|l| {
                if l < 0 {
                    NOISE
                } else {
                    let next = map.len() as i32;
                    *map.entry(l).or_insert(next)
                }
            })
            .collect();
        Self(labels)
    }

    pub fn as_slice(&self) -> &[i32] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, i: usize) -> i32 {
        self.0[i]
    }

    pub fn n_clusters(&self) -> usize {
        self.0.iter().copied().max().map_or(0, |m| (m + 1).max(0) as usize)
    }

    pub fn n_noise(&self) -> usize {
        self.0.iter().filter(|&&l| l == NOISE).count()
    }

    /// Point indices per cluster.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.n_clusters()];
        for (i, &l) in self.0.iter().enumerate() {
            if l >= 0 {
                out[l as usize].push(i);
            }
        }
        out
    }

    /// Canonical form for comparing partitions: sorted member lists plus the noise set.
    pub fn partition(&self) -> (Vec<Vec<usize>>, Vec<usize>) {
        let mut m = self.members();
        m.sort();
        let noise = (0..self.len()).filter(|&i| self.0[i] == NOISE).collect();
        (m, noise)
    }
}

impl fmt::Display for Labels {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} clusters, {} noise", self.n_clusters(), self.n_noise())
    }
}

/// Labels attached to image ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    ids: Vec<String>,
    labels: Labels,
}

impl ClusterAssignment {
    pub fn new(ids: Vec<String>, labels: Labels) -> Result<Self> {
        if ids.len() != labels.len() {
            return Err(ClusterError::InvalidLabels(format!(
                "{} ids but {} labels",
                ids.len(),
                labels.len()
            )));
        }
        Ok(Self { ids, labels })
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn labels(&self) -> &Labels {
        &self.labels
    }

    pub fn n_clusters(&self) -> usize {
        self.labels.n_clusters()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, i32)> {
        self.ids.iter().map(String::as_str).zip(self.labels.as_slice().iter().copied())
    }

    /// CSV `id,cluster` with -1 for noise.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["id", "cluster"]).expect("in-memory write");
        for (id, l) in self.iter() {
            w.write_record([id, &l.to_string()]).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory write")).expect("utf8")
    }

    pub fn write_csv(&self, path: &Path) -> std::io::Result<()> {
        std::fs::write(path, self.to_csv())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path).map_err(|e| ClusterError::Io(e.to_string()))?;
        let headers = r.headers().map_err(|e| ClusterError::Io(e.to_string()))?;
        if headers.iter().map(str::trim).collect::<Vec<_>>() != ["id", "cluster"] {
            return Err(ClusterError::Io("expected header `id,cluster`".into()));
        }
        let mut ids = Vec::new();
        let mut raw = Vec::new();
        for rec in r.records() {
            let rec = rec.map_err(|e| ClusterError::Io(e.to_string()))?;
            if rec.len() != 2 {
                return Err(ClusterError::Io(format!("expected 2 fields, found {}", rec.len())));
            }
            ids.push(rec[0].trim().to_string());
            let l: i32 = rec[1]
                .trim()
                .parse()
                .map_err(|_| ClusterError::Io(format!("bad cluster label `{}`", &rec[1])))?;
            raw.push(l);
        }
        Self::new(ids, Labels::new(raw)?)
    }
}

#[inline]
pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[inline]
pub(crate) fn dist(a: &[f64], b: &[f64]) -> f64 {
    sq_dist(a, b).sqrt()
}

/// Row-major copy of the input with contiguous rows.
#[derive(Debug, Clone)]
pub(crate) struct Points {
    data: Vec<f64>,
    dim: usize,
}

impl Points {
    pub fn new(x: ArrayView2<'_, f64>) -> Self {
        let dim = x.ncols();
        let data = x.as_standard_layout().iter().copied().collect();
        Self { data, dim }
    }

    pub fn len(&self) -> usize {
        self.data.len().checked_div(self.dim).unwrap_or(0)
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
}

/// Dense symmetric Euclidean distance matrix.
#[derive(Debug, Clone)]
pub struct DistanceMatrix {
    n: usize,
    d: Vec<f64>,
}

impl DistanceMatrix {
    pub fn new(x: ArrayView2<'_, f64>) -> Self {
        Self::from_points(&Points::new(x))
    }

    pub(crate) fn from_points(p: &Points) -> Self {
        let n = p.len();
        let mut d = vec![0.0; n * n];
        d.par_chunks_mut(n.max(1)).enumerate().for_each(|(i, row)| {
            for (j, out) in row.iter_mut().enumerate() {
                *out = dist(p.row(i), p.row(j));
            }
        });
        Self { n, d }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.d[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.d[i * self.n..(i + 1) * self.n]
    }
}
