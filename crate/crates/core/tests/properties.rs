mod common;

use std::collections::{BTreeSet, HashMap};

use ndarray::{Array2, Axis};
use proptest::prelude::*;
use rand::seq::SliceRandom;

use common::*;
use rcc_core::clustering::{
    dbscan, hdbscan, neighborhoods, select_k, ClusterAssignment, DbscanParams, Labels,
};
use rcc_core::data::{label_failures, Dataset, ImageRecord, Output, Task};
use rcc_core::dimred::{pca_fit, umap_embed, UmapParams};
use rcc_core::faultgen::{add_gaussian_noise, darken, gaussian_blur, paste_object, scale_shrink, Raster, Sprite};
use rcc_core::heatmap::{heatmap_distance, wicd};
use rcc_core::metrics::{cluster_purity, scenario_coverage, ScenarioMap};

fn points(n: std::ops::Range<usize>, d: std::ops::Range<usize>) -> impl Strategy<Value = Array2<f64>> {
    (n, d, any::<u64>()).prop_map(|(n, d, seed)| random_points(&mut rng(seed), n, d, 10.0))
}

fn is_contiguous(labels: &[i32]) -> bool {
    let used: BTreeSet<i32> = labels.iter().copied().filter(|&l| l >= 0).collect();
    labels.iter().all(|&l| l >= -1) && used.iter().copied().eq(0..used.len() as i32)
}

/// Core clusters as sets of point indices, plus the noise set.
fn core_view(x: &Array2<f64>, labels: &[i32], eps: f64, min_pts: usize) -> (BTreeSet<BTreeSet<usize>>, BTreeSet<usize>) {
    let nb = neighborhoods(x.view(), eps);
    let mut clusters: HashMap<i32, BTreeSet<usize>> = HashMap::new();
    for i in (0..labels.len()).filter(|&i| nb[i].len() >= min_pts) {
        clusters.entry(labels[i]).or_default().insert(i);
    }
    let noise = (0..labels.len()).filter(|&i| labels[i] < 0).collect();
    (clusters.into_values().collect(), noise)
}

fn record(id: String, truth: &str, pred: Option<&str>) -> ImageRecord {
    ImageRecord {
        id,
        path: None,
        true_output: Output::Label(truth.into()),
        predicted_output: pred.map(|p| Output::Label(p.into())),
        scenario: None,
    }
}

fn tagged_assignment() -> impl Strategy<Value = (Vec<i32>, Vec<Option<String>>)> {
    (1usize..40, 1i32..6, 1usize..4).prop_flat_map(|(n, k, n_tags)| {
        (
            proptest::collection::vec(-1..k, n),
            proptest::collection::vec(proptest::option::of((0..n_tags).prop_map(|t| format!("t{t}"))), n),
        )
    })
}

fn assignment(labels: &[i32], tags: &[Option<String>]) -> (ClusterAssignment, ScenarioMap) {
    let ids: Vec<String> = (0..labels.len()).map(|i| format!("i{i:03}")).collect();
    let map = ids.iter().cloned().zip(tags.iter().cloned()).collect();
    let labels = Labels::canonical(labels.iter().map(|&l| l as i64));
    (ClusterAssignment::new(ids, labels).unwrap(), map)
}

fn raster() -> impl Strategy<Value = Raster> {
    (1usize..24, 1usize..24, any::<u64>()).prop_map(|(w, h, seed)| {
        let mut r = rng(seed);
        let px = (0..w * h * 3).map(|_| rand::Rng::random(&mut r)).collect();
        Raster::new(w, h, px).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn label_failures_counts_mismatches_and_is_idempotent(
        rows in proptest::collection::vec((0u8..3, proptest::option::of(0u8..3)), 1..30),
    ) {
        let records: Vec<ImageRecord> = rows
            .iter()
            .enumerate()
            .map(|(i, (t, p))| record(format!("r{i}"), &t.to_string(), p.map(|p| p.to_string()).as_deref()))
            .collect();
        let d = Dataset::new(records, Task::Classification).unwrap();
        let failing = label_failures(&d);
        let expected = rows.iter().filter(|(t, p)| p.is_some_and(|p| p != *t)).count();
        prop_assert_eq!(failing.len(), expected);
        let again = label_failures(&d.restrict(&failing));
        prop_assert_eq!(again, failing);
    }

    #[test]
    fn dbscan_is_permutation_invariant(x in points(1..40, 1..4), eps in 0.5f64..4.0, min_pts in 2usize..6, seed: u64) {
        let mut order: Vec<usize> = (0..x.nrows()).collect();
        order.shuffle(&mut rng(seed));
        let y = x.select(Axis(0), &order);
        let p = DbscanParams::new(eps, min_pts).unwrap();
        let lx = dbscan(x.view(), &p);
        let ly = dbscan(y.view(), &p);
        // map the permuted labels back to original indices
        let mut back = vec![0; order.len()];
        for (pos, &orig) in order.iter().enumerate() {
            back[orig] = ly.get(pos);
        }
        prop_assert_eq!(core_view(&x, lx.as_slice(), eps, min_pts), core_view(&x, &back, eps, min_pts));
    }

    #[test]
    fn dbscan_partition_is_scale_homogeneous(x in points(1..40, 1..4), eps in 0.5f64..4.0, min_pts in 2usize..6, e in -4i32..5) {
        let c = 2f64.powi(e);
        let a = dbscan(x.view(), &DbscanParams::new(eps, min_pts).unwrap());
        let scaled = &x * c;
        let b = dbscan(scaled.view(), &DbscanParams::new(eps * c, min_pts).unwrap());
        prop_assert_eq!(a, b);
    }

    #[test]
    fn cluster_labels_are_contiguous(x in points(2..30, 1..3), eps in 0.3f64..3.0, min_pts in 2usize..6, mcs in 2usize..6) {
        prop_assert!(is_contiguous(dbscan(x.view(), &DbscanParams::new(eps, min_pts).unwrap()).as_slice()));
        if mcs <= x.nrows() {
            prop_assert!(is_contiguous(hdbscan(x.view(), mcs).unwrap().as_slice()));
        }
    }

    #[test]
    fn heatmap_distance_is_a_metric(
        cells in proptest::collection::vec(-5.0f64..5.0, 3 * 12),
        rows in 1usize..4,
    ) {
        let cols = 12 / rows;
        let m = |k: usize| Array2::from_shape_vec((rows, cols), cells[k * 12..k * 12 + rows * cols].to_vec()).unwrap();
        let (a, b, c) = (m(0), m(1), m(2));
        let d = |p: &Array2<f64>, q: &Array2<f64>| heatmap_distance(p.view(), q.view()).unwrap();
        prop_assert_eq!(d(&a, &a), 0.0);
        prop_assert!(d(&a, &b) >= 0.0);
        prop_assert_eq!(d(&a, &b), d(&b, &a));
        prop_assert!(d(&a, &c) <= d(&a, &b) + d(&b, &c) + 1e-9);
    }

    #[test]
    fn wicd_ignores_cluster_numbering(x in points(4..20, 1..4), k in 2usize..4, seed: u64) {
        let n = x.nrows();
        let raw: Vec<i64> = (0..n).map(|i| (i % k) as i64).collect();
        let mut perm: Vec<i64> = (0..k as i64).collect();
        perm.shuffle(&mut rng(seed));
        let a = Labels::canonical(raw.iter().copied());
        let b = Labels::new(raw.iter().map(|&l| perm[l as usize] as i32).collect()).unwrap();
        let wa = wicd(&a, x.view()).unwrap();
        let wb = wicd(&b, x.view()).unwrap();
        prop_assert!((wa - wb).abs() <= 1e-12 * wa.abs().max(1.0));
    }

    #[test]
    fn purity_ignores_relabeling_and_order((labels, tags) in tagged_assignment(), seed: u64) {
        let (a, map) = assignment(&labels, &tags);
        let Ok(base) = cluster_purity(&a, &map) else { return Ok(()) };

        let mut order: Vec<usize> = (0..labels.len()).collect();
        order.shuffle(&mut rng(seed));
        let shifted: Vec<i32> = order.iter().map(|&i| if labels[i] < 0 { -1 } else { labels[i] + 7 }).collect();
        let ids: Vec<String> = order.iter().map(|&i| format!("i{i:03}")).collect();
        let b = ClusterAssignment::new(ids, Labels::canonical(shifted.iter().map(|&l| l as i64))).unwrap();
        let other = cluster_purity(&b, &map).unwrap();

        prop_assert_eq!(base.clusters.len(), other.clusters.len());
        match (base.avg_purity, other.avg_purity) {
            (Some(x), Some(y)) => prop_assert!((x - y).abs() <= 1e-12),
            (x, y) => prop_assert_eq!(x, y),
        }
        let mut pa: Vec<(usize, Option<u64>)> = base.clusters.iter().map(|c| (c.size, c.purity.map(f64::to_bits))).collect();
        let mut pb: Vec<(usize, Option<u64>)> = other.clusters.iter().map(|c| (c.size, c.purity.map(f64::to_bits))).collect();
        pa.sort();
        pb.sort();
        prop_assert_eq!(pa, pb);
    }

    #[test]
    fn coverage_shrinks_as_threshold_rises((labels, tags) in tagged_assignment(), lo in 0.05f64..1.0, hi in 0.05f64..1.0) {
        let (lo, hi) = (lo.min(hi), lo.max(hi));
        let (a, map) = assignment(&labels, &tags);
        let (Ok(low), Ok(high)) = (scenario_coverage(&a, &map, lo), scenario_coverage(&a, &map, hi)) else {
            return Ok(());
        };
        prop_assert!(high.covered.is_subset(&low.covered));
        prop_assert!(high.coverage_pct <= low.coverage_pct);
    }

    #[test]
    fn transforms_keep_dimensions(img in raster(), sigma in 0.0f64..0.5, radius in 0.0f64..6.0, factor in 0.0f64..1.0, seed: u64) {
        let dims = |r: &Raster| (r.width(), r.height());
        prop_assert_eq!(dims(&add_gaussian_noise(&img, sigma, seed).unwrap()), dims(&img));
        prop_assert_eq!(dims(&gaussian_blur(&img, radius).unwrap()), dims(&img));
        prop_assert_eq!(dims(&darken(&img, factor).unwrap()), dims(&img));
        let delta = img.width().min(img.height()) / 2;
        if delta > 0 {
            prop_assert_eq!(dims(&scale_shrink(&img, delta).unwrap()), dims(&img));
        }
        let sprite = Sprite::opaque(Raster::filled(1, 1, [1, 2, 3]));
        prop_assert_eq!(dims(&paste_object(&img, &sprite, 0, 0).unwrap()), dims(&img));
    }

    #[test]
    fn identity_transforms_are_byte_exact(img in raster(), seed: u64) {
        prop_assert_eq!(&add_gaussian_noise(&img, 0.0, seed).unwrap(), &img);
        prop_assert_eq!(&gaussian_blur(&img, 0.0).unwrap(), &img);
        prop_assert_eq!(&darken(&img, 1.0).unwrap(), &img);
    }

    #[test]
    fn pca_components_are_orthonormal_and_ordered(x in points(3..30, 1..8)) {
        let n = x.nrows().min(x.ncols());
        let m = pca_fit(x.view(), n).unwrap();
        let gram = m.components.dot(&m.components.t());
        for i in 0..n {
            for j in 0..n {
                let want = if i == j { 1.0 } else { 0.0 };
                prop_assert!((gram[[i, j]] - want).abs() <= 1e-8);
            }
        }
        let evr = &m.explained_variance_ratio;
        prop_assert!(evr.windows(2).all(|w| w[0] >= w[1]));
        // all components kept: the ratios account for the whole variance
        prop_assert!((evr.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn umap_is_deterministic_per_seed(x in points(20..40, 3..6), seed: u64) {
        let p = UmapParams { n_neighbors: 5, n_epochs: 50, seed, ..UmapParams::default() };
        let a = umap_embed(x.view(), &p).unwrap();
        let b = umap_embed(x.view(), &p).unwrap();
        prop_assert!(a.iter().zip(b.iter()).all(|(u, v)| u.to_bits() == v.to_bits()));
    }

    #[test]
    fn select_k_finds_six_blobs(seed in 0u64..1000) {
        let fs = blob_failure_set(&[25; 6], 6, 30.0, 0, seed);
        let sel = select_k(fs.features().values(), 2..=12, seed).unwrap();
        prop_assert_eq!(sel.k, 6);
    }
}
