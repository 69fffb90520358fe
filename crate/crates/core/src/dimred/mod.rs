//! Dimensionality reduction: PCA and UMAP.

use thiserror::Error;

use crate::data::FeatureMatrix;

mod pca;
mod umap;

pub use pca::{pca_fit, pca_fit_transform, PcaModel};
pub use umap::{fit_ab, umap_embed, umap_fit_transform, UmapParams};

/// A reduced feature matrix; ids are carried over from the input.
pub type Embedding = FeatureMatrix;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DimredError {
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("n_components must be in [1, {max}], got {n}")]
    InvalidComponents { n: usize, max: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("all pairwise distances are zero")]
    DegenerateDistances,
    #[error("embedding contains non-finite values")]
    NonFinite,
}

pub type Result<T, E = DimredError> = std::result::Result<T, E>;

fn to_embedding(ids: &[String], values: ndarray::Array2<f64>) -> Result<Embedding> {
    FeatureMatrix::new(ids.to_vec(), values).map_err(|_| DimredError::NonFinite)
}
