//! Two-step greedy fixed-height structural entropy minimization.
//!
//! Step 1 agglomerates root children pairwise (best entropy reduction first)
//! until the root has at most two children, producing a binary tree. Step 2
//! repeatedly removes the internal node whose removal increases entropy
//! least until the height is at most `k`. The result is then canonicalized
//! so every leaf sits at depth exactly `k`.
//!
//! Candidate pairs/nodes live in lazy max-heaps keyed by entropy delta with
//! a deterministic tie-break on the smallest contained leaf ids, so the
//! whole construction is reproducible and runs in roughly
//! `O(m log n)` on sparse graphs.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};

use crate::entropy::{entropy_term, EncodingTree};
use crate::graph::SimpleGraph;
use crate::{Result, SebotError};

/// Greedy minimizer for the k-dimensional structural entropy objective.
/// Requires `k >= 2` and a graph with at least one edge. Every leaf of the
/// returned tree sits at depth exactly `k`.
pub fn minimize_to_height(g: &SimpleGraph, k: usize) -> Result<EncodingTree> {
    if k < 2 {
        return Err(SebotError::Rejected(format!(
            "encoding tree height must exceed 1, got {k}"
        )));
    }
    if g.volume == 0 {
        return Err(SebotError::Rejected(
            "cannot minimize structural entropy of a zero-volume graph".into(),
        ));
    }
    let mut tree = EncodingTree::flat(g);
    merge_step(g, &mut tree);
    squeeze_step(&mut tree, k);
    tree.canonicalize_to_depth(k)?;
    Ok(tree)
}

#[derive(Debug)]
struct MergeCandidate {
    reduction: f64,
    key: (usize, usize),
    a: usize,
    b: usize,
    cross: usize,
}

impl PartialEq for MergeCandidate {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for MergeCandidate {}
impl PartialOrd for MergeCandidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for MergeCandidate {
    fn cmp(&self, other: &Self) -> Ordering {
        // Max-heap: larger reduction first, then smaller leaf-id key.
        self.reduction
            .total_cmp(&other.reduction)
            .then_with(|| other.key.cmp(&self.key))
    }
}

/// Entropy reduction achieved by merging root children `a` and `b` that
/// share `cross` edges.
fn merge_reduction(tree: &EncodingTree, a: usize, b: usize, cross: usize) -> f64 {
    let tv = tree.total_vol();
    let (g1, v1) = (tree.node(a).cut, tree.node(a).vol);
    let (g2, v2) = (tree.node(b).cut, tree.node(b).vol);
    let cut = g1 + g2 - 2 * cross;
    let vol = v1 + v2;
    let delta = entropy_term(cut, vol, tv, tv)
        + entropy_term(g1, v1, vol, tv)
        + entropy_term(g2, v2, vol, tv)
        - entropy_term(g1, v1, tv, tv)
        - entropy_term(g2, v2, tv, tv);
    -delta
}

fn pair_key(tree: &EncodingTree, a: usize, b: usize) -> (usize, usize) {
    let x = tree.node(a).min_leaf;
    let y = tree.node(b).min_leaf;
    (x.min(y), x.max(y))
}

/// Step 1: binary agglomeration. Candidates are restricted to root-child
/// pairs joined by at least one edge; once none remain (disconnected
/// remainders) the two communities with the smallest member ids are fused.
fn merge_step(g: &SimpleGraph, tree: &mut EncodingTree) {
    let n = g.num_nodes;
    if n == 0 {
        return;
    }
    // Cross-edge counts between current root children. Maps may hold stale
    // keys for dead communities; `find` redirects them on read.
    let mut cross: HashMap<usize, HashMap<usize, usize>> = HashMap::new();
    for node in 0..n {
        let leaf = tree.leaf_of(node);
        let mut m = HashMap::new();
        for &nb in g.neighbors(node) {
            *m.entry(tree.leaf_of(nb)).or_insert(0) += 1;
        }
        cross.insert(leaf, m);
    }
    // Union-find over community ids (dead ids point at their successor).
    let mut succ: Vec<usize> = (0..tree.num_slots()).collect();
    fn find(succ: &mut Vec<usize>, mut x: usize) -> usize {
        while succ[x] != x {
            succ[x] = succ[succ[x]];
            x = succ[x];
        }
        x
    }

    let mut heap = BinaryHeap::new();
    for &(u, v) in &g.edges {
        let (a, b) = (tree.leaf_of(u), tree.leaf_of(v));
        heap.push(MergeCandidate {
            reduction: merge_reduction(tree, a, b, 1),
            key: pair_key(tree, a, b),
            a,
            b,
            cross: 1,
        });
    }

    let root = tree.root();
    while tree.node(root).children.len() > 2 {
        let mut picked = None;
        while let Some(c) = heap.pop() {
            let alive = |x: usize| tree.is_alive(x) && tree.node(x).parent == Some(root);
            if alive(c.a) && alive(c.b) {
                picked = Some(c);
                break;
            }
        }
        let (a, b, cr) = match picked {
            Some(c) => (c.a, c.b, c.cross),
            None => {
                // Disconnected remainders: fuse the two smallest communities.
                let mut kids: Vec<usize> = tree.node(root).children.clone();
                kids.sort_unstable_by_key(|&c| tree.node(c).min_leaf);
                (kids[0], kids[1], 0)
            }
        };
        let (merged, _) = tree.merge_with_cross(a, b, cr);
        while succ.len() < tree.num_slots() {
            succ.push(succ.len());
        }
        succ[a] = merged;
        succ[b] = merged;

        // Consolidate the two neighbor maps under the new community id.
        let ma = cross.remove(&a).unwrap_or_default();
        let mb = cross.remove(&b).unwrap_or_default();
        let mut merged_map: HashMap<usize, usize> = HashMap::new();
        for (k, cnt) in ma.into_iter().chain(mb) {
            let t = find(&mut succ, k);
            if t == merged {
                continue;
            }
            *merged_map.entry(t).or_insert(0) += cnt;
        }
        for (&nb, &cnt) in &merged_map {
            heap.push(MergeCandidate {
                reduction: merge_reduction(tree, merged, nb, cnt),
                key: pair_key(tree, merged, nb),
                a: merged,
                b: nb,
                cross: cnt,
            });
        }
        cross.insert(merged, merged_map);
    }
}

#[derive(Debug)]
struct DropCandidate {
    increase: f64,
    key: (usize, usize),
    v: usize,
    stamp: u64,
}

impl PartialEq for DropCandidate {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for DropCandidate {}
impl PartialOrd for DropCandidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for DropCandidate {
    fn cmp(&self, other: &Self) -> Ordering {
        // Max-heap: smallest increase first, then smallest leaf-id key.
        other
            .increase
            .total_cmp(&self.increase)
            .then_with(|| other.key.cmp(&self.key))
    }
}

/// Two smallest `min_leaf` values among a node's children.
fn drop_key(tree: &EncodingTree, v: usize) -> (usize, usize) {
    let (mut lo, mut hi) = (usize::MAX, usize::MAX);
    for &c in &tree.node(v).children {
        let ml = tree.node(c).min_leaf;
        if ml < lo {
            hi = lo;
            lo = ml;
        } else if ml < hi {
            hi = ml;
        }
    }
    (lo, hi)
}

/// Step 2: squeeze to height `k`, removing the cheapest internal node at a
/// time. Stale heap entries are invalidated via per-node version stamps.
fn squeeze_step(tree: &mut EncodingTree, k: usize) {
    let mut version: Vec<u64> = vec![0; tree.num_slots()];
    let mut heap = BinaryHeap::new();
    let root = tree.root();
    let droppable =
        |tree: &EncodingTree, v: usize| tree.is_alive(v) && v != root && !tree.node(v).is_leaf();
    for v in 0..tree.num_slots() {
        if droppable(tree, v) {
            heap.push(DropCandidate {
                increase: tree.drop_delta(v),
                key: drop_key(tree, v),
                v,
                stamp: 0,
            });
        }
    }
    while tree.height() > k {
        let cand = loop {
            let c = heap.pop().expect("height > k implies a droppable node");
            if droppable(tree, c.v) && version[c.v] == c.stamp {
                break c;
            }
        };
        let v = cand.v;
        let parent = tree.node(v).parent.unwrap();
        let lifted = tree.node(v).children.clone();
        tree.drop(v).expect("candidate was droppable");
        // The parent's drop delta changes (its child set grew); each lifted
        // child now hangs under a larger-volume parent.
        for touched in lifted.into_iter().chain([parent]) {
            version[touched] += 1;
            if droppable(tree, touched) {
                heap.push(DropCandidate {
                    increase: tree.drop_delta(touched),
                    key: drop_key(tree, touched),
                    v: touched,
                    stamp: version[touched],
                });
            }
        }
    }
}
