//! Mean silhouette over clustered (non-noise) points.

use ndarray::ArrayView2;

use super::{ClusterError, DistanceMatrix, Labels, Result};

pub fn silhouette(x: ArrayView2<'_, f64>, labels: &Labels) -> Result<f64> {
    silhouette_from_distances(&DistanceMatrix::new(x), labels)
}

/// `s(i) = (b - a) / max(a, b)`, with `a` the mean distance to the rest of
/// the point's cluster and `b` the smallest mean distance to another cluster.
/// Points in singleton clusters score 0; noise points are skipped.
pub fn silhouette_from_distances(d: &DistanceMatrix, labels: &Labels) -> Result<f64> {
    if d.len() != labels.len() {
        return Err(ClusterError::InvalidParameter(format!(
            "{} points but {} labels",
            d.len(),
            labels.len()
        )));
    }
    let k = labels.n_clusters();
    if k < 2 {
        return Err(ClusterError::TooFewClusters);
    }
    let sizes: Vec<usize> = labels.members().iter().map(Vec::len).collect();
    let lab = labels.as_slice();
    let mut total = 0.0;
    let mut count = 0usize;
    let mut sums = vec![0.0; k];
    for i in 0..d.len() {
        let li = lab[i];
        if li < 0 {
            continue;
        }
        count += 1;
        let li = li as usize;
        if sizes[li] == 1 {
            continue;
        }
        sums.iter_mut().for_each(|s| *s = 0.0);
        for (j, &dij) in d.row(i).iter().enumerate() {
            let lj = lab[j];
            if lj >= 0 {
                sums[lj as usize] += dij;
            }
        }
        let a = sums[li] / (sizes[li] - 1) as f64;
        let b = (0..k)
            .filter(|&c| c != li)
            .map(|c| sums[c] / sizes[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let denom = a.max(b);
        if denom > 0.0 {
            total += (b - a) / denom;
        }
    }
    Ok(total / count as f64)
}
