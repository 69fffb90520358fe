//! Principal component analysis through the eigendecomposition of the
//! centered data's Gram matrix.

use nalgebra::DMatrix;
use ndarray::{Array1, Array2, ArrayView2, Axis};

use super::{to_embedding, DimredError, Embedding, Result};
use crate::data::FeatureMatrix;

#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    pub mean: Array1<f64>,
    /// `n_components x M`, orthonormal rows ordered by decreasing variance.
    pub components: Array2<f64>,
    /// Share of the total variance carried by each component.
    pub explained_variance_ratio: Vec<f64>,
    pub singular_values: Vec<f64>,
}

impl PcaModel {
    pub fn transform(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        (&x - &self.mean.view().insert_axis(Axis(0))).dot(&self.components.t())
    }

    pub fn inverse_transform(&self, z: ArrayView2<'_, f64>) -> Array2<f64> {
        z.dot(&self.components) + self.mean.view().insert_axis(Axis(0))
    }
}

pub fn pca_fit(x: ArrayView2<'_, f64>, n_components: usize) -> Result<PcaModel> {
    let (n, m) = x.dim();
    if n < 2 {
        return Err(DimredError::TooFewSamples { needed: 2, got: n });
    }
    let max = n.min(m);
    if n_components == 0 || n_components > max {
        return Err(DimredError::InvalidComponents { n: n_components, max });
    }
    let mean = x.mean_axis(Axis(0)).expect("n >= 2");
    let centered = &x - &mean.view().insert_axis(Axis(0));
    let total: f64 = centered.iter().map(|v| v * v).sum();

    // eigenvectors of the smaller Gram matrix; for wide data they are the
    // left singular vectors and get mapped through X^T
    let a = DMatrix::from_fn(n, m, |i, j| centered[[i, j]]);
    let wide = n < m;
    let gram = if wide { &a * a.transpose() } else { a.transpose() * &a };
    let eig = gram.symmetric_eigen();
    let lambda: Vec<f64> = eig.eigenvalues.iter().map(|&l| l.max(0.0)).collect();
    let mut order: Vec<usize> = (0..lambda.len()).collect();
    order.sort_by(|&i, &j| lambda[j].total_cmp(&lambda[i]).then(i.cmp(&j)));
    let floor = lambda[order[0]] * (n.max(m) as f64) * f64::EPSILON;

    let mut components = Array2::zeros((n_components, m));
    let mut singular_values = Vec::with_capacity(n_components);
    let mut explained_variance_ratio = Vec::with_capacity(n_components);
    for (c, &k) in order.iter().take(n_components).enumerate() {
        let v = eig.eigenvectors.column(k);
        let row: Array1<f64> = if wide {
            Array1::from_iter((0..m).map(|j| (0..n).map(|i| a[(i, j)] * v[i]).sum::<f64>()))
        } else {
            Array1::from_iter(v.iter().copied())
        };
        components.row_mut(c).assign(&row);
        if lambda[k] > floor {
            orthonormalize(&mut components, c);
        } else {
            complete_basis(&mut components, c);
        }
        // sign convention: the largest-magnitude loading is positive (first one on ties)
        let mut row = components.row_mut(c);
        let pivot = row
            .iter()
            .enumerate()
            .fold(0, |best, (j, v)| if v.abs() > row[best].abs() { j } else { best });
        if row[pivot] < 0.0 {
            row.mapv_inplace(|v| -v);
        }
        singular_values.push(lambda[k].sqrt());
        explained_variance_ratio.push(if total > 0.0 { lambda[k] / total } else { 0.0 });
    }
    Ok(PcaModel { mean, components, explained_variance_ratio, singular_values })
}

/// Makes row `c` a unit vector orthogonal to rows `0..c` (two Gram-Schmidt
/// passes).
fn orthonormalize(components: &mut Array2<f64>, c: usize) {
    let mut v = components.row(c).to_owned();
    for _ in 0..2 {
        for r in 0..c {
            let proj = components.row(r).dot(&v);
            v.scaled_add(-proj, &components.row(r));
        }
    }
    let norm = v.dot(&v).sqrt();
    components.row_mut(c).assign(&(v / norm));
}

/// Replaces row `c` by the first unit basis vector, orthogonalized against
/// rows `0..c`, that keeps a usable norm.
fn complete_basis(components: &mut Array2<f64>, c: usize) {
    let m = components.ncols();
    for j in 0..m {
        components.row_mut(c).fill(0.0);
        components[[c, j]] = 1.0;
        let mut v = components.row(c).to_owned();
        for r in 0..c {
            let proj = components.row(r).dot(&v);
            v.scaled_add(-proj, &components.row(r));
        }
        if v.dot(&v).sqrt() > 1e-6 {
            orthonormalize(components, c);
            return;
        }
    }
}

pub fn pca_fit_transform(x: &FeatureMatrix, n_components: usize) -> Result<(Embedding, PcaModel)> {
    let model = pca_fit(x.values(), n_components)?;
    let z = model.transform(x.values());
    Ok((to_embedding(x.ids(), z)?, model))
}
