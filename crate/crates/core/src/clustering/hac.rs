//! Agglomerative clustering with the Ward criterion.
//!
//! Merge costs are kept as squared Ward distances and updated with the
//! Lance–Williams recurrence; reported heights are their square roots, so the
//! first merge of two singletons sits at their Euclidean distance. Among equal
//! costs the lexicographically smallest pair of active slots merges first.

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use super::{sq_dist, ClusterError, Labels, Points, Result};

/// One merge step. Points are ids `0..n`; the cluster formed at step `s` has
/// id `n + s`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Merge {
    pub a: usize,
    pub b: usize,
    pub height: f64,
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dendrogram {
    pub n: usize,
    pub merges: Vec<Merge>,
}

impl Dendrogram {
    /// Flat clustering with `n_clusters` clusters (first `n - n_clusters` merges).
    pub fn cut(&self, n_clusters: usize) -> Result<Labels> {
        if n_clusters == 0 || n_clusters > self.n {
            return Err(ClusterError::InvalidParameter(format!(
                "n_clusters must be in [1, {}], got {n_clusters}",
                self.n
            )));
        }
        let mut parent: Vec<usize> = (0..self.n).collect();
        let mut node_rep = Vec::with_capacity(self.merges.len());
        fn find(parent: &mut [usize], mut x: usize) -> usize {
            while parent[x] != x {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            x
        }
        for m in &self.merges[..self.n - n_clusters] {
            let point_of = |id: usize, node_rep: &[usize]| if id < self.n { id } else { node_rep[id - self.n] };
            let (pa, pb) = (point_of(m.a, &node_rep), point_of(m.b, &node_rep));
            let (ra, rb) = (find(&mut parent, pa), find(&mut parent, pb));
            parent[rb] = ra;
            node_rep.push(pa);
        }
        Ok(Labels::canonical((0..self.n).map(|i| find(&mut parent, i) as i64)))
    }

    /// Merge heights in merge order (non-decreasing for Ward).
    pub fn heights(&self) -> Vec<f64> {
        self.merges.iter().map(|m| m.height).collect()
    }
}

pub fn hac_ward(x: ArrayView2<'_, f64>, n_clusters: usize) -> Result<Labels> {
    ward_linkage(x)?.cut(n_clusters)
}

pub fn ward_linkage(x: ArrayView2<'_, f64>) -> Result<Dendrogram> {
    let n = x.nrows();
    if n == 0 {
        return Err(ClusterError::TooFewSamples { needed: 1, got: 0 });
    }
    let p = Points::new(x);
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let v = sq_dist(p.row(i), p.row(j));
            d[i * n + j] = v;
            d[j * n + i] = v;
        }
    }
    let mut active = vec![true; n];
    let mut size = vec![1usize; n];
    let mut id: Vec<usize> = (0..n).collect();
    let mut nn = vec![usize::MAX; n];
    let nearest = |d: &[f64], active: &[bool], i: usize| {
        let mut best = usize::MAX;
        for j in i + 1..n {
            if active[j] && (best == usize::MAX || d[i * n + j] < d[i * n + best]) {
                best = j;
            }
        }
        best
    };
    for i in 0..n {
        nn[i] = nearest(&d, &active, i);
    }

    let mut merges = Vec::with_capacity(n - 1);
    for step in 0..n - 1 {
        let mut i = usize::MAX;
        for r in 0..n {
            if !active[r] || nn[r] == usize::MAX {
                continue;
            }
            if i == usize::MAX || d[r * n + nn[r]] < d[i * n + nn[i]] {
                i = r;
            }
        }
        let j = nn[i];
        let dij = d[i * n + j];
        let (si, sj) = (size[i] as f64, size[j] as f64);
        for k in 0..n {
            if !active[k] || k == i || k == j {
                continue;
            }
            let sk = size[k] as f64;
            let v = ((si + sk) * d[i * n + k] + (sj + sk) * d[j * n + k] - sk * dij) / (si + sj + sk);
            d[i * n + k] = v;
            d[k * n + i] = v;
        }
        merges.push(Merge { a: id[i], b: id[j], height: dij.max(0.0).sqrt(), size: size[i] + size[j] });
        active[j] = false;
        size[i] += size[j];
        id[i] = n + step;

        for r in 0..n {
            if !active[r] {
                continue;
            }
            if r == i || nn[r] == i || nn[r] == j {
                nn[r] = nearest(&d, &active, r);
            } else if r < i && nn[r] != usize::MAX {
                let (cur, new) = (d[r * n + nn[r]], d[r * n + i]);
                if new < cur || (new == cur && i < nn[r]) {
                    nn[r] = i;
                }
            }
        }
    }
    Ok(Dendrogram { n, merges })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};

    #[test]
    fn hand_trace_on_four_points() {
        // d²: (0,1)=1, (2,3)=1 tie -> (0,1) first; then (2,3); final Ward
        // cost ((1+2)·361/3 + (1+2)·441/3 - 2·1) / 4 = 200
        let x = array![[0.0], [1.0], [10.0], [11.0]];
        let dg = ward_linkage(x.view()).unwrap();
        assert_eq!(dg.merges[0], Merge { a: 0, b: 1, height: 1.0, size: 2 });
        assert_eq!(dg.merges[1], Merge { a: 2, b: 3, height: 1.0, size: 2 });
        assert_eq!((dg.merges[2].a, dg.merges[2].b), (4, 5));
        assert!((dg.merges[2].height - 200f64.sqrt()).abs() < 1e-12);
        assert_eq!(dg.cut(2).unwrap().as_slice(), &[0, 0, 1, 1]);
    }

    #[test]
    fn degenerate_cluster_counts() {
        let x = array![[0.0], [1.0], [10.0], [11.0]];
        assert_eq!(hac_ward(x.view(), 4).unwrap().as_slice(), &[0, 1, 2, 3]);
        assert_eq!(hac_ward(x.view(), 1).unwrap().as_slice(), &[0, 0, 0, 0]);
        assert!(hac_ward(x.view(), 0).is_err());
        assert!(hac_ward(x.view(), 5).is_err());
    }

    /// Naive Ward: at each step recompute the merge cost of every pair of
    /// clusters from scratch as `2|A||B|/(|A|+|B|) * |mean_A - mean_B|²`.
    fn naive_ward_heights(x: &Array2<f64>) -> Vec<f64> {
        let mut clusters: Vec<Vec<usize>> = (0..x.nrows()).map(|i| vec![i]).collect();
        let mean = |c: &[usize]| {
            let mut m = vec![0.0; x.ncols()];
            for &i in c {
                for (mj, v) in m.iter_mut().zip(x.row(i)) {
                    *mj += v / c.len() as f64;
                }
            }
            m
        };
        let mut heights = vec![];
        while clusters.len() > 1 {
            let mut best = (f64::INFINITY, 0, 0);
            for a in 0..clusters.len() {
                for b in a + 1..clusters.len() {
                    let (na, nb) = (clusters[a].len() as f64, clusters[b].len() as f64);
                    let cost = 2.0 * na * nb / (na + nb) * sq_dist(&mean(&clusters[a]), &mean(&clusters[b]));
                    if cost < best.0 {
                        best = (cost, a, b);
                    }
                }
            }
            heights.push(best.0.sqrt());
            let b = clusters.remove(best.2);
            clusters[best.1].extend(b);
        }
        heights
    }

    #[test]
    fn matches_naive_ward_costs() {
        let x = Array2::from_shape_fn((12, 2), |(i, j)| ((i * 37 + j * 11) % 23) as f64 * 0.7 + (i * j) as f64 * 0.13);
        let got = ward_linkage(x.view()).unwrap().heights();
        let want = naive_ward_heights(&x);
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-9, "{got:?} vs {want:?}");
        }
        assert!(got.windows(2).all(|w| w[1] >= w[0] - 1e-12));
    }
}
