//! UMAP with exact nearest neighbors and random initialization.
//!
//! Steps: exact k-NN; per-point `rho` (nearest positive distance) and `sigma`
//! found by bisection so the neighbor memberships sum to `log2(k)`; fuzzy
//! union `a + b - a*b` of the directed graph; uniform initialization in
//! `[-10, 10]`; then epochs of edge sampling with attraction along edges and
//! repulsion from negative samples. The low-dimensional kernel is
//! `1 / (1 + a * d^(2b))`, with `(a, b)` fitted by least squares to the
//! `min_dist` offset curve.

use std::collections::BTreeMap;

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{to_embedding, DimredError, Embedding, Result};
use crate::clustering::DistanceMatrix;
use crate::data::FeatureMatrix;
use crate::rng::rng_from_seed;

const SIGMA_ITERATIONS: usize = 64;
const SIGMA_TOLERANCE: f64 = 1e-5;
const MIN_SIGMA_SCALE: f64 = 1e-3;
const GRADIENT_CLIP: f64 = 4.0;
const INIT_RANGE: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UmapParams {
    pub n_neighbors: usize,
    pub min_dist: f64,
    pub spread: f64,
    pub n_epochs: usize,
    pub n_components: usize,
    pub negative_sample_rate: usize,
    pub learning_rate: f64,
    pub repulsion_strength: f64,
    pub seed: u64,
}

impl Default for UmapParams {
    fn default() -> Self {
        Self {
            n_neighbors: 15,
            min_dist: 0.1,
            spread: 1.0,
            n_epochs: 200,
            n_components: 2,
            negative_sample_rate: 5,
            learning_rate: 1.0,
            repulsion_strength: 1.0,
            seed: 0,
        }
    }
}

impl UmapParams {
    fn validate(&self, n: usize) -> Result<()> {
        let bad = |m: &str| Err(DimredError::InvalidParameter(m.into()));
        if self.n_neighbors < 2 {
            return bad("n_neighbors must be >= 2");
        }
        if n <= self.n_neighbors {
            return Err(DimredError::TooFewSamples { needed: self.n_neighbors + 1, got: n });
        }
        if !(self.min_dist > 0.0 && self.min_dist <= 1.0) {
            return bad("min_dist must be in (0, 1]");
        }
        if !(self.spread.is_finite() && self.spread >= self.min_dist) {
            return bad("spread must be finite and >= min_dist");
        }
        if self.n_epochs == 0 || self.n_components == 0 {
            return bad("n_epochs and n_components must be positive");
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        Ok(())
    }
}

pub fn umap_fit_transform(x: &FeatureMatrix, p: &UmapParams) -> Result<Embedding> {
    to_embedding(x.ids(), umap_embed(x.values(), p)?)
}

pub fn umap_embed(x: ArrayView2<'_, f64>, p: &UmapParams) -> Result<Array2<f64>> {
    let n = x.nrows();
    p.validate(n)?;
    let d = DistanceMatrix::new(x);
    if (0..n).all(|i| d.row(i).iter().all(|&v| v == 0.0)) {
        return Err(DimredError::DegenerateDistances);
    }
    let knn = exact_knn(&d, p.n_neighbors);
    let graph = fuzzy_graph(&knn, p.n_neighbors);
    let (a, b) = fit_ab(p.spread, p.min_dist);
    let emb = optimize(n, &graph, a, b, p);
    if emb.iter().any(|v| !v.is_finite()) {
        return Err(DimredError::NonFinite);
    }
    Ok(emb)
}

/// `k` nearest neighbors of each point as `(index, distance)`, self excluded,
/// ordered by distance then index.
fn exact_knn(d: &DistanceMatrix, k: usize) -> Vec<Vec<(usize, f64)>> {
    (0..d.len())
        .into_par_iter()
        .map(|i| {
            let mut row: Vec<(usize, f64)> =
                d.row(i).iter().copied().enumerate().filter(|&(j, _)| j != i).collect();
            row.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
            row.truncate(k);
            row
        })
        .collect()
}

/// `(rho, sigma)` for one point's neighbor distances.
pub(crate) fn smooth_knn(dists: &[f64], k: usize, mean_all: f64) -> (f64, f64) {
    let target = (k as f64).log2();
    let rho = dists.iter().copied().find(|&v| v > 0.0).unwrap_or(0.0);
    let (mut lo, mut hi, mut mid) = (0.0, f64::INFINITY, 1.0);
    for _ in 0..SIGMA_ITERATIONS {
        let psum: f64 = dists.iter().map(|&v| (-(v - rho).max(0.0) / mid).exp()).sum();
        if (psum - target).abs() < SIGMA_TOLERANCE {
            break;
        }
        if psum > target {
            hi = mid;
            mid = (lo + hi) / 2.0;
        } else {
            lo = mid;
            mid = if hi.is_infinite() { mid * 2.0 } else { (lo + hi) / 2.0 };
        }
    }
    let mean_here = dists.iter().sum::<f64>() / dists.len() as f64;
    let floor = MIN_SIGMA_SCALE * if rho > 0.0 { mean_here } else { mean_all };
    (rho, mid.max(floor))
}

/// Symmetric membership graph as `(i, j, w)` with `i < j`.
fn fuzzy_graph(knn: &[Vec<(usize, f64)>], k: usize) -> Vec<(usize, usize, f64)> {
    let n = knn.len();
    let mean_all = knn.iter().flatten().map(|e| e.1).sum::<f64>() / (n * k) as f64;
    let mut directed: BTreeMap<(usize, usize), (f64, f64)> = BTreeMap::new();
    for (i, row) in knn.iter().enumerate() {
        let dists: Vec<f64> = row.iter().map(|e| e.1).collect();
        let (rho, sigma) = smooth_knn(&dists, k, mean_all);
        for &(j, dij) in row {
            let w = (-(dij - rho).max(0.0) / sigma).exp();
            let slot = directed.entry((i.min(j), i.max(j))).or_insert((0.0, 0.0));
            if i < j {
                slot.0 = w;
            } else {
                slot.1 = w;
            }
        }
    }
    directed.into_iter().map(|((i, j), (a, b))| (i, j, a + b - a * b)).filter(|e| e.2 > 0.0).collect()
}

fn optimize(n: usize, graph: &[(usize, usize, f64)], a: f64, b: f64, p: &UmapParams) -> Array2<f64> {
    let dim = p.n_components;
    let mut rng = rng_from_seed(p.seed);
    let mut emb: Vec<f64> = (0..n * dim).map(|_| rng.random_range(-INIT_RANGE..=INIT_RANGE)).collect();

    let max_w = graph.iter().map(|e| e.2).fold(0.0, f64::max);
    let min_w = max_w / p.n_epochs as f64;
    // both directions of every retained edge are sampled
    let mut edges: Vec<(usize, usize, f64)> = Vec::with_capacity(graph.len() * 2);
    for &(i, j, w) in graph.iter().filter(|e| e.2 >= min_w) {
        let eps = max_w / w;
        edges.push((i, j, eps));
        edges.push((j, i, eps));
    }
    let neg_rate = p.negative_sample_rate as f64;
    let mut next_sample: Vec<f64> = edges.iter().map(|e| e.2).collect();
    let mut next_negative: Vec<f64> = edges.iter().map(|e| e.2 / neg_rate).collect();

    let clip = |v: f64| v.clamp(-GRADIENT_CLIP, GRADIENT_CLIP);
    let mut delta = vec![0.0; dim];
    for epoch in 0..p.n_epochs {
        let e = epoch as f64;
        let alpha = p.learning_rate * (1.0 - e / p.n_epochs as f64);
        for (idx, &(j, k, eps)) in edges.iter().enumerate() {
            if next_sample[idx] > e {
                continue;
            }
            let d2 = sq(&emb, j, k, dim);
            let coeff = if d2 > 0.0 { -2.0 * a * b * d2.powf(b - 1.0) / (a * d2.powf(b) + 1.0) } else { 0.0 };
            for c in 0..dim {
                delta[c] = clip(coeff * (emb[j * dim + c] - emb[k * dim + c])) * alpha;
            }
            for c in 0..dim {
                emb[j * dim + c] += delta[c];
                emb[k * dim + c] -= delta[c];
            }
            next_sample[idx] += eps;

            let eps_neg = eps / neg_rate;
            let n_neg = ((e - next_negative[idx]) / eps_neg).floor().max(0.0) as usize;
            for _ in 0..n_neg {
                let k = rng.random_range(0..n);
                if k == j {
                    continue;
                }
                let d2 = sq(&emb, j, k, dim);
                if d2 <= 0.0 {
                    continue;
                }
                let coeff = 2.0 * p.repulsion_strength * b / ((0.001 + d2) * (a * d2.powf(b) + 1.0));
                for c in 0..dim {
                    emb[j * dim + c] += clip(coeff * (emb[j * dim + c] - emb[k * dim + c])) * alpha;
                }
            }
            next_negative[idx] += n_neg as f64 * eps_neg;
        }
    }
    Array2::from_shape_vec((n, dim), emb).expect("n * dim entries")
}

#[inline]
fn sq(emb: &[f64], i: usize, j: usize, dim: usize) -> f64 {
    (0..dim).map(|c| (emb[i * dim + c] - emb[j * dim + c]).powi(2)).sum()
}

/// Least-squares fit of `1 / (1 + a x^(2b))` to the target membership curve
/// (1 below `min_dist`, `exp(-(x - min_dist) / spread)` above) on 300 points
/// spanning `[0, 3 * spread]`, by Levenberg–Marquardt from `(1, 1)`.
pub fn fit_ab(spread: f64, min_dist: f64) -> (f64, f64) {
    let xs: Vec<f64> = (0..300).map(|i| 3.0 * spread * i as f64 / 299.0).collect();
    let ys: Vec<f64> =
        xs.iter().map(|&x| if x < min_dist { 1.0 } else { (-(x - min_dist) / spread).exp() }).collect();
    let sse = |a: f64, b: f64| -> f64 { xs.iter().zip(&ys).map(|(&x, &y)| (curve(x, a, b) - y).powi(2)).sum() };

    let (mut a, mut b) = (1.0, 1.0);
    let mut lambda = 1e-3;
    let mut cost = sse(a, b);
    for _ in 0..500 {
        // normal equations J^T J and J^T r
        let (mut jaa, mut jab, mut jbb, mut ga, mut gb) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (&x, &y) in xs.iter().zip(&ys) {
            let (f, da, db) = curve_grad(x, a, b);
            let r = f - y;
            jaa += da * da;
            jab += da * db;
            jbb += db * db;
            ga += da * r;
            gb += db * r;
        }
        let mut improved = false;
        for _ in 0..50 {
            let (maa, mbb) = (jaa * (1.0 + lambda), jbb * (1.0 + lambda));
            let det = maa * mbb - jab * jab;
            let step_a = -(mbb * ga - jab * gb) / det;
            let step_b = -(maa * gb - jab * ga) / det;
            let (na, nb) = (a + step_a, b + step_b);
            let c = if na > 0.0 && nb > 0.0 { sse(na, nb) } else { f64::INFINITY };
            if c < cost {
                let rel = (cost - c) / cost.max(f64::MIN_POSITIVE);
                a = na;
                b = nb;
                cost = c;
                lambda = (lambda / 10.0).max(1e-12);
                improved = rel > 1e-15;
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            break;
        }
    }
    (a, b)
}

fn curve(x: f64, a: f64, b: f64) -> f64 {
    1.0 / (1.0 + a * x.powf(2.0 * b))
}

/// `(f, df/da, df/db)`.
fn curve_grad(x: f64, a: f64, b: f64) -> (f64, f64, f64) {
    if x == 0.0 {
        return (1.0, 0.0, 0.0);
    }
    let u = x.powf(2.0 * b);
    let den = 1.0 + a * u;
    let f = 1.0 / den;
    let g = -1.0 / (den * den);
    (f, g * u, g * a * u * 2.0 * x.ln())
}
