//! Building a corpus of images with injected, tagged failure scenarios.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::occlusion::{overlay_occlusion, Keypoints, OcclusionKind, OcclusionStyle};
use super::transforms::{
    add_gaussian_noise, darken, default_shrink_delta, gaussian_blur, paste_object, scale_shrink, Sprite,
    DEFAULT_BLUR_RADIUS, DEFAULT_DARKNESS_FACTOR, DEFAULT_NOISE_SIGMA,
};
use super::{FaultError, Raster, Result};
use crate::data::{self, is_failing, Dataset, ImageRecord, Output, Task};
use crate::rng::{derive_seed_str, rng_from_seed};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    Hand,
    Mask,
    Sunglasses,
    Eyeglasses,
    Noise,
    Blur,
    Darkness,
    Scaling,
    Object,
}

impl Scenario {
    pub const ALL: [Scenario; 9] = [
        Scenario::Hand,
        Scenario::Mask,
        Scenario::Sunglasses,
        Scenario::Eyeglasses,
        Scenario::Noise,
        Scenario::Blur,
        Scenario::Darkness,
        Scenario::Scaling,
        Scenario::Object,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Scenario::Hand => "hand",
            Scenario::Mask => "mask",
            Scenario::Sunglasses => "sunglasses",
            Scenario::Eyeglasses => "eyeglasses",
            Scenario::Noise => "noise",
            Scenario::Blur => "blur",
            Scenario::Darkness => "darkness",
            Scenario::Scaling => "scaling",
            Scenario::Object => "object",
        }
    }

    pub fn occlusion(self) -> Option<OcclusionKind> {
        match self {
            Scenario::Hand => Some(OcclusionKind::Hand),
            Scenario::Mask => Some(OcclusionKind::Mask),
            Scenario::Sunglasses => Some(OcclusionKind::Sunglasses),
            Scenario::Eyeglasses => Some(OcclusionKind::Eyeglasses),
            _ => None,
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Scenario {
    type Err = FaultError;

    fn from_str(s: &str) -> Result<Self> {
        Scenario::ALL.into_iter().find(|sc| sc.tag() == s).ok_or_else(|| FaultError::UnknownScenario(s.into()))
    }
}

/// How many images a scenario takes and how it is rendered.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioPlan {
    /// Images per true class (classification only).
    pub per_class: Option<usize>,
    /// Images overall.
    pub total: Option<usize>,
    pub sigma: Option<f64>,
    pub radius: Option<f64>,
    pub factor: Option<f64>,
    pub delta: Option<usize>,
    /// RGBA sprite for the `object` scenario; a synthetic bag when absent.
    pub sprite: Option<PathBuf>,
    pub style: Option<OcclusionStyle>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InjectionPlan {
    pub seed: u64,
    pub scenarios: BTreeMap<String, ScenarioPlan>,
}

impl InjectionPlan {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| FaultError::InvalidPlan(e.to_string()))
    }

    fn validated(&self, task: Task) -> Result<Vec<(Scenario, &ScenarioPlan)>> {
        let mut out = Vec::with_capacity(self.scenarios.len());
        for (tag, plan) in &self.scenarios {
            let sc: Scenario = tag.parse()?;
            match (plan.per_class, plan.total, task) {
                (Some(_), Some(_), _) => {
                    return Err(FaultError::InvalidPlan(format!("`{tag}`: give per_class or total, not both")))
                }
                (None, None, _) => return Err(FaultError::InvalidPlan(format!("`{tag}`: missing per_class or total"))),
                (Some(_), None, Task::Regression { .. }) => {
                    return Err(FaultError::InvalidPlan(format!("`{tag}`: per_class needs a classification task")))
                }
                _ => {}
            }
            out.push((sc, plan));
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusSummary {
    pub manifest: PathBuf,
    /// Injected records, in plan order (scenario tag, then dataset order).
    pub injected: Vec<ImageRecord>,
    pub counts: BTreeMap<String, usize>,
}

/// Applies `plan` to correctly handled images of `d`.
///
/// Per scenario, images are sampled without replacement from records whose
/// prediction matches the ground truth (and that carry the keypoints the
/// scenario needs), with a per-class quota for `per_class` plans. Each
/// scenario samples independently with its own seed. Modified images go to
/// `out/images/<tag>/`; `out/manifest.csv` lists the original records
/// (paths made absolute) followed by the injected ones, which have id
/// `<id>__<tag>`, an empty prediction and the scenario tag.
pub fn build_failure_corpus(
    d: &Dataset,
    images: &Path,
    keypoints: &HashMap<String, Keypoints>,
    plan: &InjectionPlan,
    out: &Path,
) -> Result<CorpusSummary> {
    let scenarios = plan.validated(d.task())?;
    let correct: Vec<&ImageRecord> =
        d.records().iter().filter(|r| is_failing(r, d.task()) == Some(false) && r.path.is_some()).collect();

    let classes: BTreeSet<String> = d.records().iter().map(class_of).collect();

    let mut injected = Vec::new();
    let mut counts = BTreeMap::new();
    for (sc, sp) in scenarios {
        let seed = derive_seed_str(plan.seed, sc.tag());
        let eligible: Vec<&ImageRecord> = correct
            .iter()
            .copied()
            .filter(|r| sc.occlusion().is_none_or(|k| keypoints.get(&r.id).is_some_and(|kp| kp.supports(k))))
            .collect();
        let chosen = choose(sc, sp, &eligible, &classes, seed)?;
        let dir = out.join("images").join(sc.tag());
        fs::create_dir_all(&dir)?;
        let sprite = match (sc, &sp.sprite) {
            (Scenario::Object, Some(p)) => Some(Sprite::load(p)?),
            _ => None,
        };
        for r in &chosen {
            let src = images.join(r.path.as_deref().expect("filtered on path"));
            let img = Raster::load(&src)?;
            let modified = apply(sc, sp, &img, keypoints.get(&r.id), sprite.as_ref(), derive_seed_str(seed, &r.id))?;
            let ext = if src.extension().is_some_and(|e| e.eq_ignore_ascii_case("ppm")) { "ppm" } else { "png" };
            let file = format!("{}.{ext}", sanitize(&r.id));
            modified.save(&dir.join(&file))?;
            injected.push(ImageRecord {
                id: format!("{}__{}", r.id, sc.tag()),
                path: Some(format!("images/{}/{file}", sc.tag())),
                true_output: r.true_output.clone(),
                predicted_output: None,
                scenario: Some(sc.tag().to_string()),
            });
        }
        counts.insert(sc.tag().to_string(), chosen.len());
    }

    let images_abs = fs::canonicalize(images)?;
    let mut records: Vec<ImageRecord> = d
        .records()
        .iter()
        .map(|r| {
            let mut r = r.clone();
            if let Some(p) = &r.path {
                if Path::new(p).is_relative() {
                    r.path = Some(images_abs.join(p).to_string_lossy().into_owned());
                }
            }
            r
        })
        .collect();
    records.extend(injected.iter().cloned());
    let manifest = out.join("manifest.csv");
    let full = Dataset::new(records, d.task())?;
    data::write_manifest(&full, &manifest)?;
    data::write_task_sidecar(&manifest, d.task())?;
    Ok(CorpusSummary { manifest, injected, counts })
}

fn class_of(r: &ImageRecord) -> String {
    match &r.true_output {
        Output::Label(l) => l.clone(),
        Output::Vector(_) => String::new(),
    }
}

fn choose<'a>(
    sc: Scenario,
    sp: &ScenarioPlan,
    eligible: &[&'a ImageRecord],
    classes: &BTreeSet<String>,
    seed: u64,
) -> Result<Vec<&'a ImageRecord>> {
    let mut rng = rng_from_seed(seed);
    let mut pick = |pool: &[&'a ImageRecord], k: usize, class: Option<String>| -> Result<Vec<&'a ImageRecord>> {
        if pool.len() < k {
            return Err(FaultError::InsufficientCorrectImages {
                scenario: sc.tag().into(),
                class,
                needed: k,
                available: pool.len(),
            });
        }
        let mut idx = sample(&mut rng, pool.len(), k).into_vec();
        idx.sort_unstable();
        Ok(idx.into_iter().map(|i| pool[i]).collect())
    };
    match (sp.per_class, sp.total) {
        (Some(k), _) => {
            // every class of the dataset gets a quota, even with no eligible image
            let mut by_class: BTreeMap<String, Vec<&'a ImageRecord>> =
                classes.iter().map(|c| (c.clone(), Vec::new())).collect();
            for r in eligible {
                by_class.entry(class_of(r)).or_default().push(r);
            }
            let mut out = Vec::new();
            for (class, pool) in by_class {
                out.extend(pick(&pool, k, Some(class))?);
            }
            Ok(out)
        }
        (None, Some(k)) => pick(eligible, k, None),
        (None, None) => unreachable!("validated plan"),
    }
}

fn apply(
    sc: Scenario,
    sp: &ScenarioPlan,
    img: &Raster,
    kp: Option<&Keypoints>,
    sprite: Option<&Sprite>,
    seed: u64,
) -> Result<Raster> {
    let style = sp.style.unwrap_or_default();
    match sc {
        Scenario::Noise => add_gaussian_noise(img, sp.sigma.unwrap_or(DEFAULT_NOISE_SIGMA), seed),
        Scenario::Blur => gaussian_blur(img, sp.radius.unwrap_or(DEFAULT_BLUR_RADIUS)),
        Scenario::Darkness => darken(img, sp.factor.unwrap_or(DEFAULT_DARKNESS_FACTOR)),
        Scenario::Scaling => scale_shrink(img, sp.delta.unwrap_or_else(|| default_shrink_delta(img.width(), img.height()))),
        Scenario::Object => {
            let fallback;
            let sprite = match sprite {
                Some(s) => s,
                None => {
                    fallback = Sprite::synthetic_bag(img.width().min(img.height()) / 4);
                    &fallback
                }
            };
            let (sw, sh) = (sprite.raster.width(), sprite.raster.height());
            if sw > img.width() || sh > img.height() {
                return Err(FaultError::OutOfBounds("sprite larger than the image".into()));
            }
            let mut rng = rng_from_seed(seed);
            let x = rng.random_range(0..=img.width() - sw);
            let y = rng.random_range(0..=img.height() - sh);
            paste_object(img, sprite, x, y)
        }
        _ => {
            let kind = sc.occlusion().expect("occlusion scenario");
            overlay_occlusion(img, kind, kp.ok_or(FaultError::MissingKeypoints(kind))?, &style)
        }
    }
}

fn sanitize(id: &str) -> String {
    id.chars().map(|c| if c.is_ascii_alphanumeric() || "-_.".contains(c) { c } else { '_' }).collect()
}
