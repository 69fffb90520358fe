//! Cluster quality against injected ground truth: purity, coverage,
//! redundancy ratio, savings, and frequent/infrequent scenario classes.
//!
//! Noise points never count towards any cluster. Images without a scenario
//! tag (pre-existing failures) belong to clusters but never make a cluster
//! pure; a cluster holding no tagged image at all is excluded from scoring.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clustering::ClusterAssignment;

/// Tolerance on the coverage share so that e.g. 9/10 meets a 0.9 threshold.
const SHARE_EPSILON: f64 = 1e-12;

pub const DEFAULT_COVERAGE_THRESHOLD: f64 = 0.9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("assignment has no clusters")]
    NoClusters,
    #[error("ground truth holds no injected scenario")]
    NoScenarios,
    #[error("no scenario is covered")]
    NothingCovered,
    #[error("image `{0}` has no ground-truth entry")]
    MissingScenario(String),
    #[error("coverage threshold must be in (0, 1], got {0}")]
    InvalidThreshold(f64),
    #[error("image count must be positive")]
    NoImages,
    #[error("no failure-inducing sets given")]
    NoSets,
}

pub type Result<T, E = MetricsError> = std::result::Result<T, E>;

/// Image id to injected scenario tag (`None` for untagged images).
pub type ScenarioMap = HashMap<String, Option<String>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterScore {
    pub cluster_id: i32,
    pub size: usize,
    /// Most frequent tag (lexicographically smallest on ties).
    pub dominant_scenario: Option<String>,
    /// `None` when the cluster is excluded (no tagged image).
    pub purity: Option<f64>,
}

impl ClusterScore {
    pub fn excluded(&self) -> bool {
        self.purity.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PurityReport {
    pub clusters: Vec<ClusterScore>,
    /// Mean purity over non-excluded clusters; `None` when every cluster is excluded.
    pub avg_purity: Option<f64>,
}

/// Per-cluster tag counts, in cluster order.
fn tag_counts(a: &ClusterAssignment, scenarios: &ScenarioMap) -> Result<Vec<(usize, BTreeMap<String, usize>)>> {
    let mut out = vec![(0usize, BTreeMap::new()); a.n_clusters()];
    for (id, l) in a.iter() {
        let tag = scenarios.get(id).ok_or_else(|| MetricsError::MissingScenario(id.into()))?;
        if l < 0 {
            continue;
        }
        let slot = &mut out[l as usize];
        slot.0 += 1;
        if let Some(t) = tag {
            *slot.1.entry(t.clone()).or_default() += 1;
        }
    }
    Ok(out)
}

fn scores(counts: &[(usize, BTreeMap<String, usize>)]) -> Vec<ClusterScore> {
    counts
        .iter()
        .enumerate()
        .map(|(c, (size, tags))| {
            // max count, lexicographically smallest tag on ties (BTreeMap order)
            let dominant = tags.iter().fold(None, |best: Option<(&String, usize)>, (t, &n)| match best {
                Some((_, m)) if m >= n => best,
                _ => Some((t, n)),
            });
            ClusterScore {
                cluster_id: c as i32,
                size: *size,
                dominant_scenario: dominant.map(|d| d.0.clone()),
                purity: dominant.map(|d| d.1 as f64 / *size as f64),
            }
        })
        .collect()
}

fn average(scores: &[ClusterScore]) -> Option<f64> {
    let kept: Vec<f64> = scores.iter().filter_map(|s| s.purity).collect();
    (!kept.is_empty()).then(|| kept.iter().sum::<f64>() / kept.len() as f64)
}

/// Purity `max_f C_f / |C|` of every cluster and their mean.
pub fn cluster_purity(a: &ClusterAssignment, scenarios: &ScenarioMap) -> Result<PurityReport> {
    if a.n_clusters() == 0 {
        return Err(MetricsError::NoClusters);
    }
    let clusters = scores(&tag_counts(a, scenarios)?);
    let avg_purity = average(&clusters);
    Ok(PurityReport { clusters, avg_purity })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    /// Every injected tag present among the assignment's images.
    pub scenarios: BTreeSet<String>,
    pub covered: BTreeSet<String>,
    /// `100 * |covered| / |scenarios|`.
    pub coverage_pct: f64,
}

/// A scenario is covered when some cluster has at least `threshold` of its
/// images tagged with it.
pub fn scenario_coverage(a: &ClusterAssignment, scenarios: &ScenarioMap, threshold: f64) -> Result<CoverageReport> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(MetricsError::InvalidThreshold(threshold));
    }
    let counts = tag_counts(a, scenarios)?;
    let all: BTreeSet<String> = a.ids().iter().filter_map(|id| scenarios[id].clone()).collect();
    if all.is_empty() {
        return Err(MetricsError::NoScenarios);
    }
    let covered: BTreeSet<String> = counts
        .iter()
        .flat_map(|(size, tags)| {
            tags.iter()
                .filter(move |&(_, &n)| n as f64 / *size as f64 >= threshold - SHARE_EPSILON)
                .map(|(t, _)| t.clone())
        })
        .collect();
    let coverage_pct = 100.0 * covered.len() as f64 / all.len() as f64;
    Ok(CoverageReport { scenarios: all, covered, coverage_pct })
}

/// Clusters produced per covered scenario.
pub fn redundancy_ratio(n_clusters: usize, n_covered: usize) -> Result<f64> {
    if n_covered == 0 {
        return Err(MetricsError::NothingCovered);
    }
    Ok(n_clusters as f64 / n_covered as f64)
}

/// `1 - n_clusters / n_images`: inspection effort saved by looking at one
/// image per cluster instead of every image.
pub fn savings(n_clusters: usize, n_images: usize) -> Result<f64> {
    if n_images == 0 {
        return Err(MetricsError::NoImages);
    }
    Ok(1.0 - n_clusters as f64 / n_images as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub clusters: Vec<ClusterScore>,
    pub n_clusters: usize,
    /// Clusters holding at least one tagged image.
    pub n_scored_clusters: usize,
    pub n_noise: usize,
    pub avg_purity: Option<f64>,
    pub coverage_threshold: f64,
    pub scenarios: BTreeSet<String>,
    pub covered: BTreeSet<String>,
    pub coverage_pct: f64,
    /// Scored clusters per covered scenario; `None` when nothing is covered.
    pub redundancy_ratio: Option<f64>,
    /// `1 - scored clusters / tagged images`.
    pub savings: f64,
    /// Share of the assignment's images carrying each tag.
    pub scenario_frequencies: BTreeMap<String, f64>,
}

/// All metrics for one assignment. An assignment without clusters (all
/// noise) yields an empty report rather than an error.
pub fn evaluate(a: &ClusterAssignment, scenarios: &ScenarioMap, threshold: f64) -> Result<EvaluationReport> {
    let coverage = scenario_coverage(a, scenarios, threshold)?;
    let clusters = scores(&tag_counts(a, scenarios)?);
    let n_scored = clusters.iter().filter(|c| !c.excluded()).count();
    let mut tagged: BTreeMap<String, usize> = BTreeMap::new();
    for id in a.ids() {
        if let Some(t) = &scenarios[id] {
            *tagged.entry(t.clone()).or_default() += 1;
        }
    }
    let n_tagged: usize = tagged.values().sum();
    let n = a.ids().len() as f64;
    Ok(EvaluationReport {
        avg_purity: average(&clusters),
        n_clusters: clusters.len(),
        n_scored_clusters: n_scored,
        n_noise: a.labels().n_noise(),
        clusters,
        coverage_threshold: threshold,
        redundancy_ratio: redundancy_ratio(n_scored, coverage.covered.len()).ok(),
        savings: savings(n_scored, n_tagged)?,
        scenario_frequencies: tagged.into_iter().map(|(t, c)| (t, c as f64 / n)).collect(),
        scenarios: coverage.scenarios,
        covered: coverage.covered,
        coverage_pct: coverage.coverage_pct,
    })
}

/// Scenario counts of one failure-inducing set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioCounts {
    pub set: String,
    pub counts: BTreeMap<String, usize>,
    pub total: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Frequency {
    Frequent,
    Infrequent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyInstance {
    pub set: String,
    pub scenario: String,
    pub proportion: f64,
    pub class: Frequency,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyReport {
    pub median: f64,
    pub instances: Vec<FrequencyInstance>,
}

/// Classifies each (set, scenario) instance against the median proportion
/// over all instances.
pub fn classify_frequency(sets: &[ScenarioCounts]) -> Result<FrequencyReport> {
    let props = proportions(sets)?;
    let mut sorted: Vec<f64> = props.iter().map(|p| p.2).collect();
    sorted.sort_by(f64::total_cmp);
    let mid = sorted.len() / 2;
    let median = if sorted.len() % 2 == 1 { sorted[mid] } else { (sorted[mid - 1] + sorted[mid]) / 2.0 };
    Ok(classify(props, median))
}

/// Same as [`classify_frequency`] with a given median.
pub fn classify_with_median(sets: &[ScenarioCounts], median: f64) -> Result<FrequencyReport> {
    Ok(classify(proportions(sets)?, median))
}

fn proportions(sets: &[ScenarioCounts]) -> Result<Vec<(String, String, f64)>> {
    let props: Vec<(String, String, f64)> = sets
        .iter()
        .filter(|s| s.total > 0)
        .flat_map(|s| s.counts.iter().map(move |(t, &c)| (s.set.clone(), t.clone(), c as f64 / s.total as f64)))
        .collect();
    if props.is_empty() {
        return Err(MetricsError::NoSets);
    }
    Ok(props)
}

fn classify(props: Vec<(String, String, f64)>, median: f64) -> FrequencyReport {
    let instances = props
        .into_iter()
        .map(|(set, scenario, proportion)| FrequencyInstance {
            class: if proportion < median { Frequency::Infrequent } else { Frequency::Frequent },
            set,
            scenario,
            proportion,
        })
        .collect();
    FrequencyReport { median, instances }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clustering::Labels;

    fn fixture(groups: &[(i32, Option<&str>, usize)]) -> (ClusterAssignment, ScenarioMap) {
        let mut ids = Vec::new();
        let mut labels = Vec::new();
        let mut map = ScenarioMap::new();
        for &(l, tag, n) in groups {
            for _ in 0..n {
                let id = format!("i{}", ids.len());
                map.insert(id.clone(), tag.map(str::to_string));
                ids.push(id);
                labels.push(l);
            }
        }
        (ClusterAssignment::new(ids, Labels::new(labels).unwrap()).unwrap(), map)
    }

    #[test]
    fn purity_of_mixed_cluster() {
        let (a, m) = fixture(&[(0, Some("A"), 8), (0, Some("B"), 2)]);
        let r = cluster_purity(&a, &m).unwrap();
        assert_eq!(r.clusters[0].purity, Some(0.8));
        assert_eq!(r.clusters[0].dominant_scenario.as_deref(), Some("A"));
    }

    #[test]
    fn untagged_cluster_is_excluded() {
        let (a, m) = fixture(&[(0, None, 5), (1, Some("A"), 4), (-1, Some("B"), 3)]);
        let r = cluster_purity(&a, &m).unwrap();
        assert!(r.clusters[0].excluded());
        assert_eq!(r.avg_purity, Some(1.0));
        let (none, m2) = fixture(&[(-1, Some("A"), 2)]);
        assert_eq!(cluster_purity(&none, &m2), Err(MetricsError::NoClusters));
    }

    #[test]
    fn tie_picks_smallest_tag() {
        let (a, m) = fixture(&[(0, Some("b"), 2), (0, Some("a"), 2)]);
        assert_eq!(cluster_purity(&a, &m).unwrap().clusters[0].dominant_scenario.as_deref(), Some("a"));
    }

    #[test]
    fn coverage_boundary_is_inclusive() {
        let (a, m) = fixture(&[(0, Some("f"), 9), (0, Some("g"), 1)]);
        let c = scenario_coverage(&a, &m, 0.9).unwrap();
        assert!(c.covered.contains("f"));
        assert_eq!(c.coverage_pct, 50.0);
        assert!(scenario_coverage(&a, &m, 0.0).is_err());
        let (u, mu) = fixture(&[(0, None, 3)]);
        assert_eq!(scenario_coverage(&u, &mu, 0.9), Err(MetricsError::NoScenarios));
    }

    #[test]
    fn ratios() {
        assert!((redundancy_ratio(174, 28).unwrap() - 6.21).abs() < 0.01);
        assert_eq!(redundancy_ratio(7, 7).unwrap(), 1.0);
        assert_eq!(redundancy_ratio(3, 0), Err(MetricsError::NothingCovered));
        assert_eq!(savings(0, 10).unwrap(), 1.0);
        assert_eq!(savings(10, 10).unwrap(), 0.0);
        assert!(savings(1, 0).is_err());
    }

    #[test]
    fn frequency_classes() {
        let sets = vec![
            ScenarioCounts { set: "GD_1".into(), counts: BTreeMap::from([("s".into(), 64)]), total: 100 },
            ScenarioCounts { set: "OC_2".into(), counts: BTreeMap::from([("s".into(), 4)]), total: 100 },
        ];
        let r = classify_with_median(&sets, 0.18).unwrap();
        assert_eq!(r.instances[0].class, Frequency::Frequent);
        assert_eq!(r.instances[1].class, Frequency::Infrequent);
        let one = &sets[..1];
        let r = classify_frequency(one).unwrap();
        assert_eq!(r.median, 0.64);
        assert_eq!(r.instances[0].class, Frequency::Frequent);
        assert_eq!(classify_frequency(&[]), Err(MetricsError::NoSets));
    }

    #[test]
    fn report_fields() {
        let (a, m) = fixture(&[(0, Some("A"), 9), (0, None, 1), (1, Some("B"), 5), (2, None, 4), (-1, Some("A"), 1)]);
        let r = evaluate(&a, &m, 0.9).unwrap();
        assert_eq!(r.n_clusters, 3);
        assert_eq!(r.n_scored_clusters, 2);
        assert_eq!(r.n_noise, 1);
        assert_eq!(r.coverage_pct, 100.0);
        assert_eq!(r.redundancy_ratio, Some(1.0));
        assert_eq!(r.savings, 1.0 - 2.0 / 15.0);
        assert_eq!(r.scenario_frequencies["A"], 10.0 / 20.0);
    }
}
