//! K-means: k-means++ seeding, Lloyd iterations, best of several restarts.

use std::collections::HashSet;

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use rayon::prelude::*;

use super::{sq_dist, ClusterError, Labels, Points, Result};
use crate::rng::{derive_seed, rng_from_seed};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KMeansConfig {
    pub restarts: usize,
    pub max_iter: usize,
    pub seed: u64,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        Self { restarts: 10, max_iter: 300, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub labels: Labels,
    /// `k x M`, row `c` is the center of cluster `c`.
    pub centers: Array2<f64>,
    /// Sum of squared distances of points to their assigned center.
    pub ssd: f64,
    pub iterations: usize,
}

pub fn kmeans(x: ArrayView2<'_, f64>, k: usize, seed: u64) -> Result<KMeansResult> {
    kmeans_with(x, k, KMeansConfig { seed, ..KMeansConfig::default() })
}

pub fn kmeans_with(x: ArrayView2<'_, f64>, k: usize, cfg: KMeansConfig) -> Result<KMeansResult> {
    if k == 0 {
        return Err(ClusterError::InvalidParameter("k must be at least 1".into()));
    }
    if cfg.restarts == 0 || cfg.max_iter == 0 {
        return Err(ClusterError::InvalidParameter("restarts and max_iter must be positive".into()));
    }
    let pts = Points::new(x);
    let distinct = count_distinct(&pts);
    if k > distinct {
        return Err(ClusterError::KTooLarge { k, distinct });
    }

    let runs: Vec<Run> = (0..cfg.restarts)
        .into_par_iter()
        .map(|r| lloyd(&pts, k, derive_seed(cfg.seed, r as u64), cfg.max_iter))
        .collect();
    // lowest SSD, earliest restart on ties
    let best = runs
        .into_iter()
        .reduce(|best, run| if run.ssd < best.ssd { run } else { best })
        .expect("at least one restart");

    // canonical numbering, centers permuted to match
    let labels = Labels::canonical(best.assign.iter().map(|&c| c as i64));
    let mut centers = Array2::zeros((k, pts.dim()));
    for (i, &c) in best.assign.iter().enumerate() {
        let l = labels.get(i) as usize;
        centers.row_mut(l).assign(&ndarray::ArrayView1::from(&best.centers[c * pts.dim()..(c + 1) * pts.dim()]));
    }
    Ok(KMeansResult { labels, centers, ssd: best.ssd, iterations: best.iterations })
}

fn count_distinct(p: &Points) -> usize {
    let mut seen = HashSet::new();
    for i in 0..p.len() {
        // +0.0 folds -0.0 into 0.0
        let key: Vec<u64> = p.row(i).iter().map(|v| (v + 0.0).to_bits()).collect();
        seen.insert(key);
    }
    seen.len()
}

struct Run {
    assign: Vec<usize>,
    centers: Vec<f64>,
    ssd: f64,
    iterations: usize,
}

fn plus_plus_init(p: &Points, k: usize, seed: u64) -> Vec<f64> {
    let mut rng = rng_from_seed(seed);
    let n = p.len();
    let dim = p.dim();
    let mut centers = Vec::with_capacity(k * dim);
    let first = rng.random_range(0..n);
    centers.extend_from_slice(p.row(first));
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(p.row(i), p.row(first))).collect();
    for _ in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = None;
            for (i, &w) in d2.iter().enumerate() {
                acc += w;
                if w > 0.0 && acc >= target {
                    chosen = Some(i);
                    break;
                }
            }
            // rounding can leave `target` just above the final sum
            chosen.unwrap_or_else(|| d2.iter().rposition(|&w| w > 0.0).expect("positive total"))
        } else {
            0
        };
        centers.extend_from_slice(p.row(pick));
        let c = &centers[centers.len() - dim..].to_vec();
        for (i, slot) in d2.iter_mut().enumerate() {
            *slot = slot.min(sq_dist(p.row(i), c));
        }
    }
    centers
}

fn lloyd(p: &Points, k: usize, seed: u64, max_iter: usize) -> Run {
    let n = p.len();
    let dim = p.dim();
    let mut centers = plus_plus_init(p, k, seed);
    let mut assign = vec![usize::MAX; n];
    let mut ssd = f64::INFINITY;
    let mut iterations = 0;

    for iter in 0..max_iter {
        iterations = iter + 1;
        let mut changed = false;
        let mut new_ssd = 0.0;
        let mut point_cost = vec![0.0; n];
        for i in 0..n {
            let (mut best_c, mut best_d) = (0, f64::INFINITY);
            for c in 0..k {
                let d = sq_dist(p.row(i), &centers[c * dim..(c + 1) * dim]);
                if d < best_d {
                    best_c = c;
                    best_d = d;
                }
            }
            if assign[i] != best_c {
                assign[i] = best_c;
                changed = true;
            }
            point_cost[i] = best_d;
            new_ssd += best_d;
        }
        debug_assert!(
            new_ssd <= ssd * (1.0 + 1e-9) + 1e-12,
            "SSD increased across Lloyd iterations: {ssd} -> {new_ssd}"
        );
        ssd = new_ssd;
        if !changed {
            break;
        }

        let mut sums = vec![0.0; k * dim];
        let mut counts = vec![0usize; k];
        for i in 0..n {
            let c = assign[i];
            counts[c] += 1;
            for (s, v) in sums[c * dim..(c + 1) * dim].iter_mut().zip(p.row(i)) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                // re-seed an empty cluster at the costliest point of a non-singleton cluster
                let far = (0..n)
                    .filter(|&i| counts[assign[i]] > 1)
                    .max_by(|&a, &b| point_cost[a].total_cmp(&point_cost[b]).then(b.cmp(&a)))
                    .expect("k <= distinct points");
                counts[assign[far]] -= 1;
                for (s, v) in sums[assign[far] * dim..(assign[far] + 1) * dim].iter_mut().zip(p.row(far)) {
                    *s -= v;
                }
                assign[far] = c;
                point_cost[far] = 0.0;
                counts[c] = 1;
                sums[c * dim..(c + 1) * dim].copy_from_slice(p.row(far));
                // the assignment changed under our feet; force another pass
                ssd = f64::INFINITY;
            }
        }
        for c in 0..k {
            let inv = 1.0 / counts[c] as f64;
            for (dst, s) in centers[c * dim..(c + 1) * dim].iter_mut().zip(&sums[c * dim..(c + 1) * dim]) {
                *dst = s * inv;
            }
        }
    }
    Run { assign, centers, ssd, iterations }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    /// Exhaustive oracle: best SSD over every 2-partition of a small 1-D set.
    fn best_two_partition(xs: &[f64]) -> (f64, Vec<usize>) {
        let n = xs.len();
        let mut best = (f64::INFINITY, vec![]);
        for mask in 1..(1u32 << n) - 1 {
            let mut ssd = 0.0;
            for side in [0, 1] {
                let m: Vec<f64> = (0..n).filter(|&i| (mask >> i & 1) == side).map(|i| xs[i]).collect();
                let mean = m.iter().sum::<f64>() / m.len() as f64;
                ssd += m.iter().map(|v| (v - mean).powi(2)).sum::<f64>();
            }
            if ssd < best.0 {
                best = (ssd, (0..n).map(|i| (mask >> i & 1) as usize).collect());
            }
        }
        best
    }

    #[test]
    fn two_clusters_on_line() {
        let xs = [0.0, 1.0, 10.0, 11.0];
        let (oracle_ssd, oracle_part) = best_two_partition(&xs);
        assert_eq!(oracle_ssd, 1.0);
        let x = array![[0.0], [1.0], [10.0], [11.0]];
        let r = kmeans(x.view(), 2, 42).unwrap();
        assert_eq!(r.ssd, oracle_ssd);
        assert_eq!(r.labels.as_slice(), &[0, 0, 1, 1]);
        assert!(oracle_part[0] == oracle_part[1] && oracle_part[2] == oracle_part[3]);
        assert_eq!(r.centers[[0, 0]], 0.5);
        assert_eq!(r.centers[[1, 0]], 10.5);
    }

    #[test]
    fn k_one_is_the_mean() {
        let x = array![[0.0, 2.0], [2.0, 4.0], [4.0, 0.0]];
        let r = kmeans(x.view(), 1, 1).unwrap();
        assert_eq!(r.labels.as_slice(), &[0, 0, 0]);
        assert!((r.centers[[0, 0]] - 2.0).abs() < 1e-12);
        assert!((r.centers[[0, 1]] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn k_equals_n_has_zero_ssd() {
        let x = array![[0.0], [3.0], [7.0], [8.0], [20.0]];
        let r = kmeans(x.view(), 5, 3).unwrap();
        assert_eq!(r.ssd, 0.0);
        assert_eq!(r.labels.n_clusters(), 5);
    }

    #[test]
    fn k_above_distinct_points() {
        let x = array![[1.0], [1.0], [2.0]];
        assert_eq!(kmeans(x.view(), 3, 0).unwrap_err(), ClusterError::KTooLarge { k: 3, distinct: 2 });
        assert!(kmeans(x.view(), 0, 0).is_err());
    }

    #[test]
    fn deterministic_for_seed() {
        let x = Array2::from_shape_fn((60, 3), |(i, j)| ((i * 7 + j * 13) % 17) as f64 + (i / 20) as f64 * 30.0);
        let a = kmeans(x.view(), 4, 9).unwrap();
        let b = kmeans(x.view(), 4, 9).unwrap();
        assert_eq!(a, b);
    }
}
