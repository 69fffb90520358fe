//! Knee-point detection on a sampled curve.
//!
//! Both axes are min-max normalized to `[0, 1]`; the knee is the sample with
//! the largest perpendicular distance to the chord joining the first and last
//! normalized samples. An optional centered moving average smooths `ys` first.

use super::{ClusterError, Result};

/// Distances closer than this are treated as ties (smallest index wins).
const TIE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct KneeInput {
    xs: Vec<f64>,
    ys: Vec<f64>,
}

impl KneeInput {
    pub fn new(xs: Vec<f64>, ys: Vec<f64>) -> Result<Self> {
        if xs.len() != ys.len() {
            return Err(ClusterError::InvalidCurve(format!("{} xs but {} ys", xs.len(), ys.len())));
        }
        if xs.len() < 3 {
            return Err(ClusterError::InvalidCurve("need at least 3 samples".into()));
        }
        if xs.iter().chain(&ys).any(|v| !v.is_finite()) {
            return Err(ClusterError::InvalidCurve("non-finite sample".into()));
        }
        if xs.windows(2).any(|w| w[1] <= w[0]) {
            return Err(ClusterError::InvalidCurve("xs must be strictly increasing".into()));
        }
        Ok(Self { xs, ys })
    }

    /// Curve sampled at `0, 1, 2, ...`.
    pub fn from_ys(ys: Vec<f64>) -> Result<Self> {
        let xs = (0..ys.len()).map(|i| i as f64).collect();
        Self::new(xs, ys)
    }

    pub fn xs(&self) -> &[f64] {
        &self.xs
    }

    pub fn ys(&self) -> &[f64] {
        &self.ys
    }
}

pub fn knee_point(c: &KneeInput) -> Result<usize> {
    knee_point_smoothed(c, 1)
}

/// Knee index after a centered moving average of width `window` (1 = none).
pub fn knee_point_smoothed(c: &KneeInput, window: usize) -> Result<usize> {
    let ys = moving_average(&c.ys, window.max(1));
    let (ymin, ymax) = min_max(&ys);
    if ymax - ymin <= 0.0 {
        return Err(ClusterError::ConstantCurve);
    }
    let (xmin, xmax) = min_max(&c.xs);
    let nx: Vec<f64> = c.xs.iter().map(|x| (x - xmin) / (xmax - xmin)).collect();
    let ny: Vec<f64> = ys.iter().map(|y| (y - ymin) / (ymax - ymin)).collect();

    let last = nx.len() - 1;
    let (x0, y0) = (nx[0], ny[0]);
    let (dx, dy) = (nx[last] - x0, ny[last] - y0);
    let chord = dx.hypot(dy);

    let mut best = 0;
    let mut best_d = f64::NEG_INFINITY;
    for i in 0..nx.len() {
        let d = ((nx[i] - x0) * dy - (ny[i] - y0) * dx).abs() / chord;
        if d > best_d + TIE_TOLERANCE {
            best = i;
            best_d = d;
        }
    }
    Ok(best)
}

fn min_max(v: &[f64]) -> (f64, f64) {
    v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)))
}

fn moving_average(ys: &[f64], window: usize) -> Vec<f64> {
    if window <= 1 {
        return ys.to_vec();
    }
    let half_lo = (window - 1) / 2;
    let half_hi = window / 2;
    (0..ys.len())
        .map(|i| {
            let lo = i.saturating_sub(half_lo);
            let hi = (i + half_hi).min(ys.len() - 1);
            ys[lo..=hi].iter().sum::<f64>() / (hi - lo + 1) as f64
        })
        .collect()
}
