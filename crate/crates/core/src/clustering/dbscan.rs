//! DBSCAN with closed-ball neighborhoods.
//!
//! The neighborhood of a point is every point at distance `<= eps`, the point
//! itself included, and a point is core when its neighborhood holds at least
//! `min_pts` points. Core points reachable through each other's neighborhoods
//! form a cluster; clusters are numbered by their lowest-index core point. A
//! non-core point joins the cluster of its lowest-index core neighbor, or is
//! noise when it has none.

use std::collections::VecDeque;

use ndarray::ArrayView2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{dist, ClusterError, Labels, Points, Result, NOISE};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DbscanParams {
    eps: f64,
    min_pts: usize,
}

impl DbscanParams {
    pub fn new(eps: f64, min_pts: usize) -> Result<Self> {
        if !(eps.is_finite() && eps > 0.0) {
            return Err(ClusterError::InvalidParameter(format!("eps must be positive, got {eps}")));
        }
        if min_pts < 2 {
            return Err(ClusterError::InvalidParameter(format!("min_pts must be >= 2, got {min_pts}")));
        }
        Ok(Self { eps, min_pts })
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn min_pts(&self) -> usize {
        self.min_pts
    }
}

/// Closed-ball neighbor lists (ascending indices, self included).
pub fn neighborhoods(x: ArrayView2<'_, f64>, eps: f64) -> Vec<Vec<usize>> {
    let p = Points::new(x);
    (0..p.len())
        .into_par_iter()
        .map(|i| (0..p.len()).filter(|&j| dist(p.row(i), p.row(j)) <= eps).collect())
        .collect()
}

pub fn dbscan(x: ArrayView2<'_, f64>, params: &DbscanParams) -> Labels {
    dbscan_from_neighbors(&neighborhoods(x, params.eps), params.min_pts)
}

/// DBSCAN over precomputed neighbor lists, so several `min_pts` values can
/// share one neighborhood computation.
pub fn dbscan_from_neighbors(neighbors: &[Vec<usize>], min_pts: usize) -> Labels {
    let n = neighbors.len();
    let core: Vec<bool> = neighbors.iter().map(|nb| nb.len() >= min_pts).collect();
    let mut labels = vec![NOISE; n];
    let mut next = 0;
    let mut queue = VecDeque::new();
    for seed in 0..n {
        if !core[seed] || labels[seed] != NOISE {
            continue;
        }
        labels[seed] = next;
        queue.push_back(seed);
        while let Some(p) = queue.pop_front() {
            for &q in &neighbors[p] {
                if core[q] && labels[q] == NOISE {
                    labels[q] = next;
                    queue.push_back(q);
                }
            }
        }
        next += 1;
    }
    for i in 0..n {
        if !core[i] {
            if let Some(&c) = neighbors[i].iter().find(|&&j| core[j]) {
                labels[i] = labels[c];
            }
        }
    }
    Labels::new(labels).expect("clusters numbered contiguously")
}
