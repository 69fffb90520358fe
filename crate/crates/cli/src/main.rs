//! `rcc`: command-line runner for root-cause clustering pipelines.

mod config;

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use rcc_core::clustering::{ClusterAssignment, ClusterError};
use rcc_core::data::{self, DataError, FeatureMatrix};
use rcc_core::faultgen::{build_failure_corpus, FaultError, InjectionPlan, Keypoints};
use rcc_core::heatmap::HeatmapError;
use rcc_core::metrics::{evaluate, MetricsError, DEFAULT_COVERAGE_THRESHOLD};
use rcc_core::pipeline::{
    emit_report, resolve_features, run_grid, run_on_features, Clusterer, Dimred, FeatureSource, PipelineError,
    PipelineSpec, Report, ReportFormat, Stage, StageTimings,
};
use rcc_core::{Dataset, FailureSet};

use config::Config;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Stage(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) => 3,
            CliError::Stage(_) => 4,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Data(m) => write!(f, "data error: {m}"),
            CliError::Stage(m) => write!(f, "stage failure: {m}"),
        }
    }
}

macro_rules! data_errors {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Data(e.to_string())
            }
        }
    )*};
}

data_errors!(DataError, FaultError, HeatmapError, ClusterError, MetricsError, std::io::Error);

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match &e {
            PipelineError::Stage { stage: Stage::Features, .. } | PipelineError::EmptyFailureSet => {
                CliError::Data(e.to_string())
            }
            PipelineError::Stage { .. } | PipelineError::NoResults => CliError::Stage(e.to_string()),
            PipelineError::NoSources | PipelineError::InvalidSpec(_) => CliError::Usage(e.to_string()),
            PipelineError::Format(_) | PipelineError::Io(_) => CliError::Data(e.to_string()),
        }
    }
}

type Result<T, E = CliError> = std::result::Result<T, E>;

#[derive(Debug, Parser)]
#[command(name = "rcc", version, about = "Root-cause clustering of DNN failure-inducing images")]
struct Cli {
    /// Worker threads for grid cells (0 = all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// TOML or JSON file with defaults; flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Inject failure scenarios into correctly handled images.
    Inject {
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        images: PathBuf,
        /// JSON object mapping image ids to facial keypoints.
        #[arg(long)]
        keypoints: Option<PathBuf>,
        #[arg(long)]
        plan: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run one pipeline and write the cluster assignment.
    Cluster {
        /// Feature matrix (CSV or FMX1), `raw:SIDE` or `hudd:INDEX`.
        #[arg(long)]
        features: Option<String>,
        /// Heatmap index; clusters the heatmaps of the minimal-WICD layer.
        #[arg(long)]
        heatmaps: Option<PathBuf>,
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long, value_enum)]
        dimred: Option<DimredArg>,
        #[arg(long, value_enum)]
        algo: Option<AlgoArg>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run every dimred x clusterer combination for each feature source.
    Grid {
        /// Comma-separated feature sources.
        #[arg(long, value_delimiter = ',')]
        features: Vec<String>,
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a cluster assignment against the manifest's scenario tags.
    Evaluate {
        #[arg(long)]
        assignment: PathBuf,
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        coverage_threshold: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Re-emit grid results as a table.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, value_enum)]
        format: Option<FormatArg>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum DimredArg {
    None,
    Pca,
    Umap,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum AlgoArg {
    Kmeans,
    Dbscan,
    Hdbscan,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Json,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("rcc: {e}");
            ExitCode::from(e.code())
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let cfg = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    let jobs = cli.jobs.or(cfg.jobs).unwrap_or(0);
    match cli.command {
        Command::Inject { manifest, images, keypoints, plan, out } => {
            inject(&require(manifest.or(cfg.manifest.clone()), "--manifest")?, &images, keypoints.as_deref(), &plan, &out)
        }
        Command::Cluster { features, heatmaps, manifest, dimred, algo, seed, out } => {
            let manifest = require(manifest.or(cfg.manifest.clone()), "--manifest")?;
            let source = match (heatmaps.or(cfg.heatmaps.clone()), features.or(cfg.features.clone())) {
                (Some(h), _) => FeatureSource::HuddHeatmaps { path: h },
                (None, Some(f)) => parse_source(&f, &manifest)?,
                (None, None) => return Err(CliError::Usage("give --features or --heatmaps".into())),
            };
            let dimred = match dimred {
                Some(d) => dimred_of(d, &cfg),
                None => match cfg.dimred.as_deref() {
                    Some(name) => named_dimred(name, &cfg)?,
                    None => return Err(CliError::Usage("missing --dimred".into())),
                },
            };
            let clusterer = match algo {
                Some(a) => clusterer_of(a, &cfg),
                None => match cfg.algo.as_deref() {
                    Some(name) => named_clusterer(name, &cfg)?,
                    None => return Err(CliError::Usage("missing --algo".into())),
                },
            };
            let seed = require(seed.or(cfg.seed), "--seed")?;
            cluster(PipelineSpec { feature_source: source, dimred, clusterer, seed }, &manifest, &out)
        }
        Command::Grid { features, manifest, seed, out } => {
            let manifest = require(manifest.or(cfg.manifest.clone()), "--manifest")?;
            let features = if features.is_empty() {
                cfg.features.iter().flat_map(|f| f.split(',')).map(str::to_string).collect()
            } else {
                features
            };
            if features.is_empty() {
                return Err(CliError::Usage("missing --features".into()));
            }
            let sources = features.iter().map(|f| parse_source(f, &manifest)).collect::<Result<Vec<_>>>()?;
            grid(&sources, &manifest, require(seed.or(cfg.seed), "--seed")?, jobs, &out)
        }
        Command::Evaluate { assignment, manifest, coverage_threshold, out } => {
            let manifest = require(manifest.or(cfg.manifest.clone()), "--manifest")?;
            let threshold = coverage_threshold.or(cfg.coverage_threshold).unwrap_or(DEFAULT_COVERAGE_THRESHOLD);
            evaluate_cmd(&assignment, &manifest, threshold, &out)
        }
        Command::Report { input, format, out } => {
            let format = match format {
                Some(FormatArg::Csv) => ReportFormat::Csv,
                Some(FormatArg::Json) => ReportFormat::Json,
                None => match cfg.format.as_deref() {
                    Some("csv") => ReportFormat::Csv,
                    Some("json") => ReportFormat::Json,
                    Some(other) => return Err(CliError::Usage(format!("unknown format `{other}`"))),
                    None => return Err(CliError::Usage("missing --format".into())),
                },
            };
            report(&input, format, &out)
        }
    }
}

fn require<T>(v: Option<T>, flag: &str) -> Result<T> {
    v.ok_or_else(|| CliError::Usage(format!("missing {flag}")))
}

/// `raw:SIDE`, `hudd:INDEX` or a feature-matrix path. Raw pixels resolve
/// image paths against the manifest's directory.
fn parse_source(spec: &str, manifest: &Path) -> Result<FeatureSource> {
    if let Some(side) = spec.strip_prefix("raw:") {
        let side: usize = side.parse().map_err(|_| CliError::Usage(format!("bad raw side in `{spec}`")))?;
        if side == 0 {
            return Err(CliError::Usage("raw side must be positive".into()));
        }
        let root = manifest.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(FeatureSource::RawPixels { side, root: Some(root) })
    } else if let Some(index) = spec.strip_prefix("hudd:") {
        Ok(FeatureSource::HuddHeatmaps { path: index.into() })
    } else {
        Ok(FeatureSource::File { path: spec.into() })
    }
}

fn dimred_of(d: DimredArg, cfg: &Config) -> Dimred {
    match d {
        DimredArg::None => Dimred::None,
        DimredArg::Pca => cfg.pca_components.map_or_else(Dimred::pca, |n| Dimred::Pca { n_components: n }),
        DimredArg::Umap => cfg.umap.map_or_else(Dimred::umap, Dimred::Umap),
    }
}

fn named_dimred(name: &str, cfg: &Config) -> Result<Dimred> {
    let d = DimredArg::from_str(name, true).map_err(|_| CliError::Usage(format!("unknown dimred `{name}`")))?;
    Ok(dimred_of(d, cfg))
}

fn clusterer_of(a: AlgoArg, cfg: &Config) -> Clusterer {
    match a {
        AlgoArg::Kmeans => cfg.k_range.map_or_else(Clusterer::kmeans, |[k_min, k_max]| Clusterer::KMeansAuto { k_min, k_max }),
        AlgoArg::Dbscan => cfg.min_pts_range.map_or_else(Clusterer::dbscan, |[min_pts_min, min_pts_max]| {
            Clusterer::DbscanAuto { min_pts_min, min_pts_max }
        }),
        AlgoArg::Hdbscan => {
            cfg.min_cluster_size.map_or_else(Clusterer::hdbscan, |m| Clusterer::Hdbscan { min_cluster_size: m })
        }
    }
}

fn named_clusterer(name: &str, cfg: &Config) -> Result<Clusterer> {
    let a = AlgoArg::from_str(name, true).map_err(|_| CliError::Usage(format!("unknown algo `{name}`")))?;
    Ok(clusterer_of(a, cfg))
}

/// The failing records of the manifest. Features that a source computes on
/// its own (raw pixels, heatmaps) replace the single-column placeholder.
fn failure_set(manifest: &Path, sources: &[FeatureSource]) -> Result<FailureSet> {
    let d = data::load_manifest(manifest)?;
    let failing = data::label_failures(&d);
    if failing.is_empty() {
        return Err(CliError::Data(format!("{} holds no failing records", manifest.display())));
    }
    let file = sources.iter().find_map(|s| match s {
        FeatureSource::File { path } => Some(path),
        _ => None,
    });
    let features = match file {
        Some(p) => data::load_feature_matrix(p)?,
        None => FeatureMatrix::new(failing.clone(), ndarray::Array2::zeros((failing.len(), 1)))?,
    };
    Ok(FailureSet::new(d.restrict(&failing), &features)?)
}

fn inject(manifest: &Path, images: &Path, keypoints: Option<&Path>, plan: &Path, out: &Path) -> Result<()> {
    let d: Dataset = data::load_manifest(manifest)?;
    let kp: HashMap<String, Keypoints> = match keypoints {
        Some(p) => serde_json::from_str(&fs::read_to_string(p)?)
            .map_err(|e| CliError::Data(format!("keypoints {}: {e}", p.display())))?,
        None => HashMap::new(),
    };
    let plan = InjectionPlan::load(plan)?;
    fs::create_dir_all(out)?;
    let summary = build_failure_corpus(&d, images, &kp, &plan, out)?;
    for (tag, n) in &summary.counts {
        println!("{tag}\t{n}");
    }
    println!("manifest\t{}", summary.manifest.display());
    Ok(())
}

fn cluster(spec: PipelineSpec, manifest: &Path, out: &Path) -> Result<()> {
    let fs_ = failure_set(manifest, std::slice::from_ref(&spec.feature_source))?;
    let (features, layer) = resolve_features(&spec.feature_source, &fs_)?;
    let mut result = run_on_features(&spec, &fs_, &features)?;
    result.selection.layer = layer;
    write_parent(out)?;
    result.assignment.write_csv(out)?;
    let labels = result.assignment.labels();
    println!("{}\tclusters={}\tnoise={}\t{}", spec.label(), labels.n_clusters(), labels.n_noise(), result.selection);
    Ok(())
}

#[derive(Serialize)]
struct CellTiming<'a> {
    pipeline: String,
    assignment: Option<&'a str>,
    timings: Option<StageTimings>,
}

/// Writes `results.json`, one assignment CSV per successful cell under
/// `assignments/`, and per-stage wall-clock times in `timings.json`.
fn grid(sources: &[FeatureSource], manifest: &Path, seed: u64, jobs: usize, out: &Path) -> Result<()> {
    let fs_ = failure_set(manifest, sources)?;
    let cells = run_grid(sources, &fs_, seed, jobs)?;
    let dir = out.join("assignments");
    fs::create_dir_all(&dir)?;
    let names: Vec<String> = cells.iter().enumerate().map(|(i, c)| format!("{i:03}_{}.csv", file_safe(&c.spec.label()))).collect();
    let mut timings = Vec::with_capacity(cells.len());
    for (cell, name) in cells.iter().zip(&names) {
        let ok = cell.outcome.as_ref().ok();
        if let Some(r) = ok {
            r.assignment.write_csv(&dir.join(name))?;
        }
        timings.push(CellTiming {
            pipeline: cell.spec.label(),
            assignment: ok.map(|_| name.as_str()),
            timings: ok.map(|r| r.timings),
        });
    }
    let report = Report::from_cells(&cells, fs_.len());
    emit_report(&report, ReportFormat::Json, &out.join("results.json"))?;
    let t = serde_json::to_string_pretty(&timings).map_err(|e| CliError::Data(e.to_string()))?;
    fs::write(out.join("timings.json"), t + "\n")?;

    let failed = cells.iter().filter(|c| c.outcome.is_err()).count();
    for c in cells.iter().filter_map(|c| c.outcome.as_ref().err().map(|e| (c.spec.label(), e))) {
        eprintln!("rcc: cell {} failed: {}", c.0, c.1);
    }
    println!("cells\t{}\tok\t{}\tfailed\t{failed}", cells.len(), cells.len() - failed);
    if let Some(b) = report.best() {
        println!("best\t{}/{}/{}\tpurity={:?}\tcoverage={:?}", b.source, b.dimred, b.clusterer, b.avg_purity, b.coverage_pct);
    }
    if failed == cells.len() {
        return Err(CliError::Stage("every grid cell failed".into()));
    }
    Ok(())
}

fn evaluate_cmd(assignment: &Path, manifest: &Path, threshold: f64, out: &Path) -> Result<()> {
    let a = ClusterAssignment::read_csv(assignment)?;
    let d = data::load_manifest(manifest)?;
    let report = evaluate(&a, &d.scenario_map(), threshold)?;
    write_parent(out)?;
    let text = serde_json::to_string_pretty(&report).map_err(|e| CliError::Data(e.to_string()))?;
    fs::write(out, text + "\n")?;
    println!(
        "clusters\t{}\tpurity\t{:?}\tcoverage\t{}\tredundancy\t{:?}\tsavings\t{}",
        report.n_clusters, report.avg_purity, report.coverage_pct, report.redundancy_ratio, report.savings
    );
    Ok(())
}

fn report(input: &Path, format: ReportFormat, out: &Path) -> Result<()> {
    let src = if input.is_dir() { input.join("results.json") } else { input.to_path_buf() };
    let text = fs::read_to_string(&src).map_err(|e| CliError::Data(format!("{}: {e}", src.display())))?;
    let report = Report::from_json(&text)?;
    fs::create_dir_all(out)?;
    let ext = match format {
        ReportFormat::Csv => "csv",
        ReportFormat::Json => "json",
    };
    let path = out.join(format!("pipelines.{ext}"));
    emit_report(&report, format, &path)?;
    println!("{}", path.display());
    Ok(())
}

fn write_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => Ok(fs::create_dir_all(p)?),
        _ => Ok(()),
    }
}

fn file_safe(label: &str) -> String {
    label.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '.' { c } else { '_' }).collect()
}
