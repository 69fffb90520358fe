//! HDBSCAN*: mutual-reachability MST, single-linkage hierarchy, condensed
//! tree and excess-of-mass cluster selection.
//!
//! The core distance of a point is its distance to the `min_cluster_size`-th
//! nearest point, counting the point itself. Density levels are expressed as
//! `lambda = 1 / distance`; the stability of a condensed cluster is the sum
//! over its points of `lambda_leave - lambda_birth`. A cluster is selected
//! when it has no child clusters, or when its stability exceeds the summed
//! stability of the best selection among its descendants; the root is never
//! selected. Points outside every selected cluster are noise. Equal merge
//! distances split a cluster into all of their components at once.

use ndarray::ArrayView2;

use super::{ClusterError, DistanceMatrix, Labels, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CondensedEdge {
    /// Cluster id (`>= n_points`).
    pub parent: usize,
    /// Point index (`< n_points`) or cluster id.
    pub child: usize,
    pub lambda: f64,
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HdbscanTree {
    pub n_points: usize,
    pub edges: Vec<CondensedEdge>,
    /// Stability per cluster id, indexed by `id - n_points`.
    pub stability: Vec<f64>,
    /// Selected cluster ids, ascending.
    pub selected: Vec<usize>,
    pub labels: Labels,
}

impl HdbscanTree {
    pub fn root(&self) -> usize {
        self.n_points
    }
}

pub fn hdbscan(x: ArrayView2<'_, f64>, min_cluster_size: usize) -> Result<Labels> {
    Ok(hdbscan_tree(x, min_cluster_size)?.labels)
}

fn lambda_of(d: f64) -> f64 {
    if d > 0.0 {
        1.0 / d
    } else {
        f64::MAX
    }
}

pub fn hdbscan_tree(x: ArrayView2<'_, f64>, min_cluster_size: usize) -> Result<HdbscanTree> {
    let n = x.nrows();
    if min_cluster_size < 2 || min_cluster_size > n {
        return Err(ClusterError::MinClusterSizeTooLarge { min_cluster_size, n });
    }
    let dm = DistanceMatrix::new(x);
    let core = core_distances(&dm, min_cluster_size);
    let mst = prim_mst(&dm, &core);
    let hierarchy = single_linkage(n, mst);
    let (edges, n_clusters) = condense(n, &hierarchy, min_cluster_size);
    let stability = stabilities(n, n_clusters, &edges);
    let selected = select_eom(n, n_clusters, &edges, &stability);
    let labels = label_points(n, n_clusters, &edges, &selected);
    Ok(HdbscanTree { n_points: n, edges, stability, selected, labels })
}

fn core_distances(dm: &DistanceMatrix, k: usize) -> Vec<f64> {
    (0..dm.len())
        .map(|i| {
            let mut row = dm.row(i).to_vec();
            row.sort_by(f64::total_cmp);
            row[k - 1]
        })
        .collect()
}

/// Dense Prim on mutual-reachability distances; ties go to the lowest index.
fn prim_mst(dm: &DistanceMatrix, core: &[f64]) -> Vec<(usize, usize, f64)> {
    let n = dm.len();
    let mut in_tree = vec![false; n];
    let mut best = vec![f64::INFINITY; n];
    let mut from = vec![0usize; n];
    let mut edges = Vec::with_capacity(n.saturating_sub(1));
    let mut current = 0;
    in_tree[0] = true;
    for _ in 1..n {
        for v in 0..n {
            if in_tree[v] {
                continue;
            }
            let mr = dm.get(current, v).max(core[current]).max(core[v]);
            if mr < best[v] {
                best[v] = mr;
                from[v] = current;
            }
        }
        let next = (0..n)
            .filter(|&v| !in_tree[v])
            .min_by(|&a, &b| best[a].total_cmp(&best[b]).then(a.cmp(&b)))
            .expect("a vertex remains");
        in_tree[next] = true;
        edges.push((from[next], next, best[next]));
        current = next;
    }
    edges
}

/// Internal node `n + i` of the single-linkage tree.
#[derive(Debug, Clone, Copy)]
struct LinkNode {
    left: usize,
    right: usize,
    dist: f64,
    size: usize,
}

fn single_linkage(n: usize, mut mst: Vec<(usize, usize, f64)>) -> Vec<LinkNode> {
    mst.sort_by(|a, b| a.2.total_cmp(&b.2));
    let mut parent: Vec<usize> = (0..n).collect();
    let mut node_of: Vec<usize> = (0..n).collect();
    let mut size = vec![1usize; n];
    let mut nodes = Vec::with_capacity(n.saturating_sub(1));
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for (a, b, d) in mst {
        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
        let merged = size[ra] + size[rb];
        nodes.push(LinkNode { left: node_of[ra], right: node_of[rb], dist: d, size: merged });
        parent[rb] = ra;
        size[ra] = merged;
        node_of[ra] = n + nodes.len() - 1;
    }
    nodes
}

fn condense(n: usize, hierarchy: &[LinkNode], mcs: usize) -> (Vec<CondensedEdge>, usize) {
    let mut edges = Vec::new();
    if n == 1 {
        return (edges, 1);
    }
    let size_of = |node: usize| if node < n { 1 } else { hierarchy[node - n].size };
    let leaves = |node: usize| {
        let mut out = Vec::new();
        let mut stack = vec![node];
        while let Some(v) = stack.pop() {
            if v < n {
                out.push(v);
            } else {
                stack.push(hierarchy[v - n].right);
                stack.push(hierarchy[v - n].left);
            }
        }
        out.sort_unstable();
        out
    };

    // Merges at equal distance form one multiway split: expand children of
    // the same height so that ties do not create zero-length clusters.
    let components = |node: usize| {
        let dist = hierarchy[node - n].dist;
        let mut out = Vec::new();
        let mut stack = vec![hierarchy[node - n].right, hierarchy[node - n].left];
        while let Some(v) = stack.pop() {
            if v >= n && hierarchy[v - n].dist == dist {
                stack.push(hierarchy[v - n].right);
                stack.push(hierarchy[v - n].left);
            } else {
                out.push(v);
            }
        }
        out
    };

    let root = n + hierarchy.len() - 1;
    let mut label = vec![usize::MAX; root + 1];
    label[root] = n;
    let mut next = n + 1;
    let mut queue = std::collections::VecDeque::from([root]);
    while let Some(node) = queue.pop_front() {
        if node < n {
            continue;
        }
        let lambda = lambda_of(hierarchy[node - n].dist);
        let here = label[node];
        let parts = components(node);
        let n_big = parts.iter().filter(|&&c| size_of(c) >= mcs).count();
        for c in parts {
            let size = size_of(c);
            if size < mcs {
                for p in leaves(c) {
                    edges.push(CondensedEdge { parent: here, child: p, lambda, size: 1 });
                }
            } else if n_big == 1 {
                label[c] = here;
                queue.push_back(c);
            } else {
                label[c] = next;
                edges.push(CondensedEdge { parent: here, child: next, lambda, size });
                next += 1;
                queue.push_back(c);
            }
        }
    }
    (edges, next - n)
}

fn stabilities(n: usize, n_clusters: usize, edges: &[CondensedEdge]) -> Vec<f64> {
    let mut birth = vec![0.0; n_clusters];
    for e in edges.iter().filter(|e| e.child >= n) {
        birth[e.child - n] = e.lambda;
    }
    let mut stability = vec![0.0; n_clusters];
    for e in edges {
        stability[e.parent - n] += (e.lambda - birth[e.parent - n]) * e.size as f64;
    }
    stability
}

fn cluster_children(n: usize, n_clusters: usize, edges: &[CondensedEdge]) -> Vec<Vec<usize>> {
    let mut children = vec![Vec::new(); n_clusters];
    for e in edges.iter().filter(|e| e.child >= n) {
        children[e.parent - n].push(e.child);
    }
    children
}

fn select_eom(n: usize, n_clusters: usize, edges: &[CondensedEdge], stability: &[f64]) -> Vec<usize> {
    let children = cluster_children(n, n_clusters, edges);
    let mut selected = vec![false; n_clusters];
    let mut best = stability.to_vec();
    // child ids are always larger than their parent's, so descending order is bottom-up
    for c in (1..n_clusters).rev() {
        if children[c].is_empty() {
            selected[c] = true;
            continue;
        }
        let child_sum: f64 = children[c].iter().map(|&ch| best[ch - n]).sum();
        if stability[c] > child_sum {
            selected[c] = true;
            let mut stack: Vec<usize> = children[c].clone();
            while let Some(d) = stack.pop() {
                selected[d - n] = false;
                stack.extend(&children[d - n]);
            }
        } else {
            best[c] = child_sum;
        }
    }
    (0..n_clusters).filter(|&c| selected[c]).map(|c| c + n).collect()
}

fn label_points(n: usize, n_clusters: usize, edges: &[CondensedEdge], selected: &[usize]) -> Labels {
    let mut parent_of = vec![usize::MAX; n_clusters];
    let mut owner = vec![usize::MAX; n];
    for e in edges {
        if e.child >= n {
            parent_of[e.child - n] = e.parent;
        } else {
            owner[e.child] = e.parent;
        }
    }
    let mut is_selected = vec![false; n_clusters];
    for &c in selected {
        is_selected[c - n] = true;
    }
    let raw = (0..n).map(|p| {
        let mut c = owner[p];
        while c != usize::MAX {
            if is_selected[c - n] {
                return c as i64;
            }
            c = parent_of[c - n];
        }
        -1
    });
    Labels::canonical(raw)
}
