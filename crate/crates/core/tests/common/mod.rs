//! Fixtures and brute-force reference implementations shared by the
//! integration tests. Nothing here calls into the clustering code under test.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, HashMap};

use ndarray::Array2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rcc_core::data::{Dataset, FailureSet, FeatureMatrix, ImageRecord, Output, Task};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Gaussian blobs (unit variance) with pairwise center distance `sep`, plus
/// `n_uniform` untagged points drawn uniformly over the blobs' bounding box.
/// Blob `b` is tagged `s<b>`.
pub fn blob_failure_set(sizes: &[usize], dim: usize, sep: f64, n_uniform: usize, seed: u64) -> FailureSet {
    assert!(sizes.len() <= dim);
    let mut r = rng(seed);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let offset = sep / std::f64::consts::SQRT_2;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut records = Vec::new();
    let mut push = |id: String, row: Vec<f64>, tag: Option<String>, rows: &mut Vec<Vec<f64>>| {
        rows.push(row);
        records.push(ImageRecord {
            id,
            path: None,
            true_output: Output::Label("ok".into()),
            predicted_output: Some(Output::Label("wrong".into())),
            scenario: tag,
        });
    };
    for (b, &n) in sizes.iter().enumerate() {
        for i in 0..n {
            let row = (0..dim).map(|d| if d == b { offset } else { 0.0 } + normal.sample(&mut r)).collect();
            push(format!("s{b}_{i:03}"), row, Some(format!("s{b}")), &mut rows);
        }
    }
    for i in 0..n_uniform {
        let row = (0..dim).map(|_| r.random_range(-3.0..offset + 3.0)).collect();
        push(format!("u_{i:03}"), row, None, &mut rows);
    }
    let ids: Vec<String> = records.iter().map(|r| r.id.clone()).collect();
    let fm = FeatureMatrix::from_rows(ids, &rows).unwrap();
    FailureSet::new(Dataset::new(records, Task::Classification).unwrap(), &fm).unwrap()
}

pub fn random_points(r: &mut ChaCha8Rng, n: usize, d: usize, scale: f64) -> Array2<f64> {
    Array2::from_shape_fn((n, d), |_| r.random_range(0.0..scale))
}

pub fn euclid(x: &Array2<f64>, i: usize, j: usize) -> f64 {
    x.row(i).iter().zip(x.row(j)).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
}

/// Relabels clusters by first appearance; noise stays -1.
pub fn canon(labels: &[i32]) -> Vec<i32> {
    let mut map = HashMap::new();
    labels
        .iter()
        .map(|&l| {
            if l < 0 {
                -1
            } else {
                let next = map.len() as i32;
                *map.entry(l).or_insert(next)
            }
        })
        .collect()
}

struct Dsu(Vec<usize>);

impl Dsu {
    fn new(n: usize) -> Self {
        Dsu((0..n).collect())
    }
    fn find(&mut self, x: usize) -> usize {
        if self.0[x] != x {
            let r = self.find(self.0[x]);
            self.0[x] = r;
        }
        self.0[x]
    }
    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.0[ra.max(rb)] = ra.min(rb);
        }
    }
}

/// DBSCAN by definition: core points have at least `min_pts` points
/// (themselves included) within the closed `eps` ball; clusters are the
/// connected components of cores, numbered by their smallest core index; a
/// border point takes the cluster of its lowest-index core neighbor.
pub fn naive_dbscan(x: &Array2<f64>, eps: f64, min_pts: usize) -> Vec<i32> {
    let n = x.nrows();
    let nb: Vec<Vec<usize>> = (0..n).map(|i| (0..n).filter(|&j| euclid(x, i, j) <= eps).collect()).collect();
    let core: Vec<bool> = nb.iter().map(|v| v.len() >= min_pts).collect();
    let mut dsu = Dsu::new(n);
    for i in 0..n {
        for &j in &nb[i] {
            if core[i] && core[j] {
                dsu.union(i, j);
            }
        }
    }
    let mut id_of_root = BTreeMap::new();
    for i in (0..n).filter(|&i| core[i]) {
        let r = dsu.find(i);
        let next = id_of_root.len() as i32;
        id_of_root.entry(r).or_insert(next);
    }
    (0..n)
        .map(|i| {
            let anchor = if core[i] { Some(i) } else { nb[i].iter().copied().find(|&j| core[j]) };
            anchor.map_or(-1, |a| id_of_root[&dsu.find(a)])
        })
        .collect()
}

/// HDBSCAN* evaluated from its definition on the complete mutual-reachability
/// graph. A cluster alive below distance `w` splits into the connected
/// components of its members joined by edges shorter than `w`; components
/// smaller than `min_cluster_size` drop out as points at `lambda = 1/w`.
/// Two or more large components become child clusters; exactly one
/// continues the parent. Excess-of-mass selection never picks the root.
pub fn brute_force_hdbscan(x: &Array2<f64>, mcs: usize) -> Vec<i32> {
    let n = x.nrows();
    let core: Vec<f64> = (0..n)
        .map(|i| {
            let mut d: Vec<f64> = (0..n).map(|j| euclid(x, i, j)).collect();
            d.sort_by(f64::total_cmp);
            d[mcs - 1]
        })
        .collect();
    let mr = |i: usize, j: usize| euclid(x, i, j).max(core[i]).max(core[j]);
    let lambda = |w: f64| if w > 0.0 { 1.0 / w } else { f64::MAX };

    struct Node {
        members: Vec<usize>,
        stability: f64,
        children: Vec<usize>,
    }
    let mut nodes: Vec<Node> = Vec::new();

    // (members, birth lambda, parent)
    let mut pending: Vec<(Vec<usize>, f64, Option<usize>)> = vec![((0..n).collect(), 0.0, None)];
    while let Some((members, birth, parent)) = pending.pop() {
        let id = nodes.len();
        nodes.push(Node { members: members.clone(), stability: 0.0, children: Vec::new() });
        if let Some(p) = parent {
            nodes[p].children.push(id);
        }
        let mut current = members;
        let mut stability = 0.0;
        let mut ceiling = f64::INFINITY;
        loop {
            // next distinct edge weight below the current level
            let w = current
                .iter()
                .flat_map(|&a| current.iter().filter(move |&&b| b > a).map(move |&b| mr(a, b)))
                .filter(|&v| v < ceiling)
                .fold(f64::NEG_INFINITY, f64::max);
            if w == f64::NEG_INFINITY {
                break;
            }
            ceiling = w;
            let mut dsu = Dsu::new(n);
            for &a in &current {
                for &b in &current {
                    if a < b && mr(a, b) < w {
                        dsu.union(a, b);
                    }
                }
            }
            let mut comps: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
            for &a in &current {
                comps.entry(dsu.find(a)).or_default().push(a);
            }
            let (big, small): (Vec<Vec<usize>>, Vec<Vec<usize>>) =
                comps.into_values().partition(|c| c.len() >= mcs);
            let l = lambda(w);
            stability += small.iter().map(|c| c.len()).sum::<usize>() as f64 * (l - birth);
            match big.len() {
                0 => break,
                1 => current = big.into_iter().next().unwrap(),
                _ => {
                    for c in big {
                        stability += c.len() as f64 * (l - birth);
                        pending.push((c, l, Some(id)));
                    }
                    break;
                }
            }
        }
        nodes[id].stability = stability;
    }

    // bottom-up excess of mass
    fn best(nodes: &[Node], c: usize, chosen: &mut Vec<usize>) -> f64 {
        if nodes[c].children.is_empty() {
            chosen.push(c);
            return nodes[c].stability;
        }
        let mut below = Vec::new();
        let sum: f64 = nodes[c].children.iter().map(|&ch| best(nodes, ch, &mut below)).sum();
        if c != 0 && nodes[c].stability > sum {
            chosen.push(c);
            nodes[c].stability
        } else {
            chosen.extend(below);
            sum
        }
    }
    let mut chosen = Vec::new();
    if !nodes[0].children.is_empty() {
        best(&nodes, 0, &mut chosen);
    }
    let mut labels = vec![-1; n];
    for (k, &c) in chosen.iter().enumerate() {
        for &p in &nodes[c].members {
            labels[p] = k as i32;
        }
    }
    canon(&labels)
}

/// Purity, coverage, redundancy and savings recounted from raw labels.
#[derive(Debug)]
pub struct Recount {
    pub purities: Vec<Option<f64>>,
    pub avg_purity: Option<f64>,
    pub covered: BTreeSet<String>,
    pub all: BTreeSet<String>,
    pub redundancy: Option<f64>,
    pub savings: f64,
}

pub fn recount(labels: &[i32], tags: &[Option<String>], threshold: f64) -> Recount {
    let k = labels.iter().copied().max().map_or(0, |m| (m + 1).max(0) as usize);
    let mut purities = Vec::new();
    let mut covered = BTreeSet::new();
    for c in 0..k as i32 {
        let idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        let distinct: BTreeSet<&String> = idx.iter().filter_map(|&i| tags[i].as_ref()).collect();
        let mut top = 0usize;
        for t in &distinct {
            let cnt = idx.iter().filter(|&&i| tags[i].as_ref() == Some(*t)).count();
            top = top.max(cnt);
            if cnt as f64 >= threshold * idx.len() as f64 - 1e-9 {
                covered.insert((*t).clone());
            }
        }
        purities.push((!distinct.is_empty()).then(|| top as f64 / idx.len() as f64));
    }
    let scored: Vec<f64> = purities.iter().flatten().copied().collect();
    let avg_purity = (!scored.is_empty()).then(|| scored.iter().sum::<f64>() / scored.len() as f64);
    let all: BTreeSet<String> = tags.iter().flatten().cloned().collect();
    let tagged = tags.iter().filter(|t| t.is_some()).count();
    let redundancy = (!covered.is_empty()).then(|| scored.len() as f64 / covered.len() as f64);
    let savings = 1.0 - scored.len() as f64 / tagged as f64;
    Recount { purities, avg_purity, covered, all, redundancy, savings }
}
