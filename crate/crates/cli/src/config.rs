//! Optional run configuration. Every key is a default that the matching
//! command-line flag overrides. Files ending in `.json` are read as JSON,
//! anything else as TOML.

use std::fs;
use std::path::{Path, PathBuf};

use rcc_core::dimred::UmapParams;
use serde::Deserialize;

use crate::CliError;

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub jobs: Option<usize>,
    pub seed: Option<u64>,
    pub manifest: Option<PathBuf>,
    pub features: Option<String>,
    pub heatmaps: Option<PathBuf>,
    pub dimred: Option<String>,
    pub algo: Option<String>,
    pub coverage_threshold: Option<f64>,
    pub format: Option<String>,
    pub pca_components: Option<usize>,
    pub umap: Option<UmapParams>,
    /// Inclusive K range for k-means selection.
    pub k_range: Option<[usize; 2]>,
    /// Inclusive MinPts candidate range for DBSCAN selection.
    pub min_pts_range: Option<[usize; 2]>,
    pub min_cluster_size: Option<usize>,
}

impl Config {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
        let parsed = if is_json {
            serde_json::from_str(&text).map_err(|e| e.to_string())
        } else {
            toml::from_str(&text).map_err(|e| e.to_string())
        };
        parsed.map_err(|e| CliError::Usage(format!("invalid config {}: {e}", path.display())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(name: &str, body: &str) -> (tempfile::TempDir, PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join(name);
        fs::write(&p, body).unwrap();
        (dir, p)
    }

    #[test]
    fn toml_and_json_agree() {
        let (_a, t) = write("c.toml", "seed = 9\nalgo = \"hdbscan\"\nk_range = [2, 8]\n[umap]\nn_neighbors = 7\n");
        let (_b, j) = write("c.json", r#"{"seed": 9, "algo": "hdbscan", "k_range": [2, 8], "umap": {"n_neighbors": 7}}"#);
        let ct = Config::load(&t).unwrap();
        assert_eq!(ct, Config::load(&j).unwrap());
        assert_eq!(ct.umap.unwrap().n_neighbors, 7);
        assert_eq!(ct.umap.unwrap().n_epochs, UmapParams::default().n_epochs);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let (_d, p) = write("c.toml", "sed = 3\n");
        assert!(matches!(Config::load(&p), Err(CliError::Usage(_))));
    }
}
