//! Automated choice of K (k-means), eps and MinPts (DBSCAN).

use std::ops::RangeInclusive;

use ndarray::ArrayView2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    dbscan_from_neighbors, kmeans, knee_point, silhouette_from_distances, ClusterError, DistanceMatrix,
    KMeansResult, KneeInput, Labels, Result,
};
use crate::rng::derive_seed;

pub const DEFAULT_K_RANGE: RangeInclusive<usize> = 5..=35;
pub const DEFAULT_MIN_PTS_RANGE: RangeInclusive<usize> = 3..=20;

#[derive(Debug, Clone, PartialEq)]
pub struct KSelection {
    pub k: usize,
    /// `(k, SSD)` for every k in the range.
    pub curve: Vec<(usize, f64)>,
    pub result: KMeansResult,
}

/// Runs k-means for every k in `k_range` (k-th run seeded with
/// `derive_seed(seed, k)`) and picks the knee of the SSD curve.
pub fn select_k(x: ArrayView2<'_, f64>, k_range: RangeInclusive<usize>, seed: u64) -> Result<KSelection> {
    let ks: Vec<usize> = k_range.collect();
    if ks.len() < 3 {
        return Err(ClusterError::InvalidParameter("k range must hold at least 3 values".into()));
    }
    if ks[0] == 0 {
        return Err(ClusterError::InvalidParameter("k range must start at 1 or above".into()));
    }
    let runs: Vec<Result<KMeansResult>> =
        ks.par_iter().map(|&k| kmeans(x, k, derive_seed(seed, k as u64))).collect();
    let runs: Vec<KMeansResult> = runs.into_iter().collect::<Result<_>>()?;
    let curve: Vec<(usize, f64)> = ks.iter().zip(&runs).map(|(&k, r)| (k, r.ssd)).collect();
    let knee = knee_point(&KneeInput::new(
        ks.iter().map(|&k| k as f64).collect(),
        curve.iter().map(|c| c.1).collect(),
    )?)?;
    let result = runs.into_iter().nth(knee).expect("knee index in range");
    Ok(KSelection { k: ks[knee], curve, result })
}

/// Sorted nearest-neighbor distances of every point (self excluded).
pub fn nn_distances(d: &DistanceMatrix) -> Vec<f64> {
    let mut out: Vec<f64> = (0..d.len())
        .map(|i| {
            d.row(i)
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, &v)| v)
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    out.sort_by(f64::total_cmp);
    out
}

/// The nearest-neighbor distance at the knee of the ascending NN-distance curve.
pub fn select_eps(x: ArrayView2<'_, f64>) -> Result<f64> {
    select_eps_with(&DistanceMatrix::new(x))
}

pub fn select_eps_with(d: &DistanceMatrix) -> Result<f64> {
    if d.len() < 3 {
        return Err(ClusterError::TooFewSamples { needed: 3, got: d.len() });
    }
    let ys = nn_distances(d);
    let knee = knee_point(&KneeInput::from_ys(ys.clone())?)?;
    let eps = ys[knee];
    if eps > 0.0 {
        Ok(eps)
    } else {
        Err(ClusterError::NonPositiveEps)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinPtsSelection {
    pub min_pts: usize,
    pub labels: Labels,
    pub silhouette: f64,
    /// Silhouette per candidate; `None` when the candidate gave fewer than 2 clusters.
    pub scores: Vec<(usize, Option<f64>)>,
}

pub fn select_min_pts(
    x: ArrayView2<'_, f64>,
    eps: f64,
    candidates: RangeInclusive<usize>,
) -> Result<MinPtsSelection> {
    select_min_pts_with(&DistanceMatrix::new(x), eps, candidates)
}

/// Same as [`select_min_pts`] over a precomputed distance matrix.
pub fn select_min_pts_with(
    d: &DistanceMatrix,
    eps: f64,
    candidates: RangeInclusive<usize>,
) -> Result<MinPtsSelection> {
    if !(eps.is_finite() && eps > 0.0) {
        return Err(ClusterError::InvalidParameter(format!("eps must be positive, got {eps}")));
    }
    if candidates.is_empty() || *candidates.start() < 2 {
        return Err(ClusterError::InvalidParameter("MinPts candidates must be a non-empty range >= 2".into()));
    }
    let neighbors: Vec<Vec<usize>> = (0..d.len())
        .into_par_iter()
        .map(|i| d.row(i).iter().enumerate().filter(|&(_, &v)| v <= eps).map(|(j, _)| j).collect())
        .collect();
    let runs: Vec<(usize, Labels, Option<f64>)> = candidates
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|m| {
            let labels = dbscan_from_neighbors(&neighbors, m);
            let score = if labels.n_clusters() >= 2 { silhouette_from_distances(d, &labels).ok() } else { None };
            (m, labels, score)
        })
        .collect();

    let scores = runs.iter().map(|(m, _, s)| (*m, *s)).collect();
    let mut best: Option<(usize, &Labels, f64)> = None;
    for (m, labels, score) in &runs {
        if let Some(s) = *score {
            // strict: ties keep the smaller MinPts
            if best.is_none_or(|b| s > b.2) {
                best = Some((*m, labels, s));
            }
        }
    }
    let (min_pts, labels, silhouette) = best.ok_or(ClusterError::NoValidConfiguration)?;
    Ok(MinPtsSelection { min_pts, labels: labels.clone(), silhouette, scores })
}
