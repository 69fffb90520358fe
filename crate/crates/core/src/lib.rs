//! Root-cause clustering for DNN failure analysis.
//!
//! The crate groups failure-inducing images into clusters that share a common
//! cause. A pipeline takes per-image feature vectors (from a backbone export,
//! from heatmaps of a selected layer, or from raw pixels), optionally reduces
//! them with PCA or UMAP, and clusters them with a self-tuning K-means, DBSCAN
//! or HDBSCAN. Known failure scenarios can be injected into image corpora to
//! obtain ground truth, and clusterings are scored with purity, coverage,
//! redundancy ratio and savings.
//!
//! Modules:
//! - [`data`]: manifests, feature-matrix files, failure labeling.
//! - [`dimred`]: PCA and UMAP.
//! - [`clustering`]: K-means, DBSCAN, HDBSCAN, Ward HAC, silhouette, knee point.
//! - [`heatmap`]: heatmap normalization, ICD/WICD and layer selection.
//! - [`faultgen`]: image transforms and injected-scenario corpora.
//! - [`metrics`]: purity, coverage, redundancy, savings, frequency classes.
//! - [`pipeline`]: pipeline specs, grid execution and report emission.

pub mod clustering;
pub mod data;
pub mod dimred;
pub mod faultgen;
pub mod heatmap;
pub mod metrics;
pub mod pipeline;
pub mod rng;

pub use clustering::{ClusterAssignment, Labels, NOISE};
pub use data::{Dataset, FailureSet, FeatureMatrix, ImageRecord, Output, Task};
pub use pipeline::{PipelineResult, PipelineSpec};
