//! Density-based clustering over mutual-reachability distances.
//!
//! core distances -> mutual reachability -> Prim MST -> single-linkage
//! dendrogram -> condensed tree -> excess-of-mass selection.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::model::euclidean;

/// Distances at or below this are treated as this value when turned into
/// densities, so duplicate points get a large but finite lambda.
const MIN_DISTANCE: f64 = 1e-12;

/// Distance from each point to its `min_samples`-th nearest neighbor, itself excluded.
pub fn core_distances(points: &[Vec<f64>], min_samples: usize) -> Result<Vec<f64>> {
    if min_samples == 0 || points.len() <= min_samples {
        return Err(Error::invalid(format!(
            "core distances need more than {min_samples} points (got {})",
            points.len()
        )));
    }
    Ok((0..points.len())
        .map(|i| {
            let mut d: Vec<f64> = (0..points.len())
                .filter(|&j| j != i)
                .map(|j| euclidean(&points[i], &points[j]))
                .collect();
            let (_, kth, _) = d.select_nth_unstable_by(min_samples - 1, f64::total_cmp);
            *kth
        })
        .collect())
}

pub struct MutualReachability<'a> {
    points: &'a [Vec<f64>],
    cores: &'a [f64],
}

impl<'a> MutualReachability<'a> {
    pub fn new(points: &'a [Vec<f64>], cores: &'a [f64]) -> Self {
        debug_assert_eq!(points.len(), cores.len());
        Self { points, cores }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// `max(core(a), core(b), dist(a, b))`
    pub fn distance(&self, a: usize, b: usize) -> f64 {
        self.cores[a].max(self.cores[b]).max(euclidean(&self.points[a], &self.points[b]))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MstEdge {
    pub a: usize,
    pub b: usize,
    pub weight: f64,
}

/// Dense Prim's algorithm, O(n^2). Edges come out in insertion order.
pub fn minimum_spanning_tree(mr: &MutualReachability<'_>) -> Vec<MstEdge> {
    let n = mr.len();
    if n < 2 {
        return Vec::new();
    }
    let mut in_tree = vec![false; n];
    let mut best = vec![f64::INFINITY; n];
    let mut from = vec![0usize; n];
    let mut edges = Vec::with_capacity(n - 1);
    let mut current = 0;
    in_tree[0] = true;
    for _ in 1..n {
        let mut next = usize::MAX;
        let mut next_w = f64::INFINITY;
        for j in 0..n {
            if in_tree[j] {
                continue;
            }
            let d = mr.distance(current, j);
            if d < best[j] {
                best[j] = d;
                from[j] = current;
            }
            if best[j] < next_w || next == usize::MAX {
                next_w = best[j];
                next = j;
            }
        }
        in_tree[next] = true;
        edges.push(MstEdge { a: from[next], b: next, weight: next_w });
        current = next;
    }
    edges
}

/// Merge step of the single-linkage dendrogram. Node ids `< n` are points;
/// merge `i` creates node `n + i`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkageStep {
    pub left: usize,
    pub right: usize,
    pub distance: f64,
    pub size: usize,
}

pub fn single_linkage(n: usize, mst: &[MstEdge]) -> Vec<LinkageStep> {
    let mut edges = mst.to_vec();
    edges.sort_by(|x, y| {
        x.weight
            .total_cmp(&y.weight)
            .then(x.a.min(x.b).cmp(&y.a.min(y.b)))
            .then(x.a.max(x.b).cmp(&y.a.max(y.b)))
    });
    // union-find over 2n-1 node ids
    let mut parent: Vec<usize> = (0..2 * n).collect();
    let mut size: Vec<usize> = vec![1; 2 * n];
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    let mut steps = Vec::with_capacity(n.saturating_sub(1));
    for (i, e) in edges.iter().enumerate() {
        let ra = find(&mut parent, e.a);
        let rb = find(&mut parent, e.b);
        let node = n + i;
        let (left, right) = (ra.min(rb), ra.max(rb));
        size[node] = size[ra] + size[rb];
        parent[ra] = node;
        parent[rb] = node;
        steps.push(LinkageStep { left, right, distance: e.weight, size: size[node] });
    }
    steps
}

/// One row of the condensed tree: `child` (a point `< n` or a cluster
/// label `>= n`) leaves `parent` at density `lambda`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CondensedEdge {
    pub parent: usize,
    pub child: usize,
    pub lambda: f64,
    pub child_size: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CondensedNode {
    pub node_id: usize,
    pub parent: Option<usize>,
    pub lambda_birth: f64,
    pub lambda_death: f64,
    pub child_count: usize,
    pub stability: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CondensedTree {
    pub n_points: usize,
    pub edges: Vec<CondensedEdge>,
    /// Indexed by `label - n_points`; the root is label `n_points`.
    pub nodes: Vec<CondensedNode>,
}

fn lambda_of(distance: f64) -> f64 {
    1.0 / distance.max(MIN_DISTANCE)
}

/// Collapses the dendrogram: a split where one side is smaller than
/// `min_cluster_size` sheds that side's points from the parent instead of
/// creating a new cluster.
pub fn condense(steps: &[LinkageStep], n: usize, min_cluster_size: usize) -> CondensedTree {
    let root = 2 * n - 2;
    let node_size = |id: usize| if id < n { 1 } else { steps[id - n].size };
    let mut relabel = vec![0usize; 2 * n - 1];
    relabel[root] = n;
    let mut next_label = n + 1;
    let mut edges = Vec::new();

    let points_under = |start: usize| -> Vec<usize> {
        let mut out = Vec::new();
        let mut queue = vec![start];
        while let Some(id) = queue.pop() {
            if id < n {
                out.push(id);
            } else {
                queue.push(steps[id - n].right);
                queue.push(steps[id - n].left);
            }
        }
        out.sort_unstable();
        out
    };

    let mut queue = VecDeque::from([root]);
    while let Some(node) = queue.pop_front() {
        if node < n {
            continue;
        }
        let step = steps[node - n];
        let lambda = lambda_of(step.distance);
        let here = relabel[node];
        let (ls, rs) = (node_size(step.left), node_size(step.right));
        let left_big = ls >= min_cluster_size;
        let right_big = rs >= min_cluster_size;
        if left_big && right_big {
            for (child, size) in [(step.left, ls), (step.right, rs)] {
                relabel[child] = next_label;
                edges.push(CondensedEdge { parent: here, child: next_label, lambda, child_size: size });
                next_label += 1;
                queue.push_back(child);
            }
        } else {
            for (child, big) in [(step.left, left_big), (step.right, right_big)] {
                if big {
                    relabel[child] = here;
                    queue.push_back(child);
                } else {
                    for p in points_under(child) {
                        edges.push(CondensedEdge { parent: here, child: p, lambda, child_size: 1 });
                    }
                }
            }
        }
    }

    let n_clusters = next_label - n;
    let mut nodes: Vec<CondensedNode> = (0..n_clusters)
        .map(|i| CondensedNode {
            node_id: n + i,
            parent: None,
            lambda_birth: 0.0,
            lambda_death: 0.0,
            child_count: 0,
            stability: 0.0,
        })
        .collect();
    for e in &edges {
        if e.child >= n {
            let c = &mut nodes[e.child - n];
            c.parent = Some(e.parent);
            c.lambda_birth = e.lambda;
        }
    }
    for e in &edges {
        let birth = nodes[e.parent - n].lambda_birth;
        let p = &mut nodes[e.parent - n];
        p.stability += (e.lambda - birth) * e.child_size as f64;
        p.lambda_death = p.lambda_death.max(e.lambda);
        p.child_count += e.child_size;
    }
    CondensedTree { n_points: n, edges, nodes }
}

/// Excess-of-mass selection. A cluster is kept over its descendants iff its
/// stability is at least the best total its children can achieve. The root
/// never competes with its children; it is selected only when it has none,
/// so a dataset without internal structure yields one cluster.
pub fn select_clusters(tree: &CondensedTree) -> Vec<usize> {
    let n = tree.n_points;
    let m = tree.nodes.len();
    let mut children: Vec<Vec<usize>> = vec![Vec::new(); m];
    for node in &tree.nodes {
        if let Some(p) = node.parent {
            children[p - n].push(node.node_id - n);
        }
    }
    let mut best = vec![0.0; m];
    let mut selected = vec![false; m];
    // children always carry larger labels than their parent
    for i in (0..m).rev() {
        let own = tree.nodes[i].stability;
        if children[i].is_empty() {
            best[i] = own;
            selected[i] = true;
            continue;
        }
        let sub: f64 = children[i].iter().map(|&c| best[c]).sum();
        if i > 0 && own >= sub {
            best[i] = own;
            selected[i] = true;
            let mut stack = children[i].clone();
            while let Some(c) = stack.pop() {
                selected[c] = false;
                stack.extend(children[c].iter().copied());
            }
        } else {
            best[i] = sub;
            selected[i] = false;
        }
    }
    (0..m).filter(|&i| selected[i]).map(|i| i + n).collect()
}

/// Cluster index per point (position in `selected`), `None` for outliers.
pub fn label_points(tree: &CondensedTree, selected: &[usize]) -> Vec<Option<usize>> {
    let n = tree.n_points;
    let mut point_parent = vec![usize::MAX; n];
    for e in &tree.edges {
        if e.child < n {
            point_parent[e.child] = e.parent;
        }
    }
    let slot: std::collections::HashMap<usize, usize> =
        selected.iter().enumerate().map(|(i, &c)| (c, i)).collect();
    point_parent
        .into_iter()
        .map(|mut c| {
            while c != usize::MAX {
                if let Some(&s) = slot.get(&c) {
                    return Some(s);
                }
                c = tree.nodes[c - n].parent.unwrap_or(usize::MAX);
            }
            None
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    pub labels: Vec<Option<usize>>,
    pub n_clusters: usize,
    pub tree: CondensedTree,
}

pub fn hdbscan(points: &[Vec<f64>], min_cluster_size: usize, min_samples: usize) -> Result<Clustering> {
    let n = points.len();
    if n < 2 {
        return Err(Error::invalid("clustering needs at least two points"));
    }
    let cores = core_distances(points, min_samples)?;
    let mr = MutualReachability::new(points, &cores);
    let mst = minimum_spanning_tree(&mr);
    let steps = single_linkage(n, &mst);
    let tree = condense(&steps, n, min_cluster_size);
    let selected = select_clusters(&tree);
    let labels = label_points(&tree, &selected);
    Ok(Clustering { labels, n_clusters: selected.len(), tree })
}
