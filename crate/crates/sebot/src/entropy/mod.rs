//! Encoding trees and structural entropy.
//!
//! An encoding tree is a rooted tree whose leaves are the graph's nodes and
//! whose internal nodes are nested communities. The structural entropy of a
//! graph under a tree sums, over every non-root tree node, the term
//!
//! ```text
//!   -(cut(v) / vol(V)) * log2(vol(v) / vol(parent(v)))
//! ```
//!
//! in bits, where `cut(v)` counts graph edges crossing the node's member-set
//! boundary and `vol` sums member degrees. Minimizing this quantity over
//! fixed-height trees recovers a hierarchical community division; the greedy
//! minimizer lives in [`minimize`], the exhaustive small-graph oracle in
//! [`oracle`], and the one-hot cluster assignment extraction in [`stack`].

mod minimize;
mod oracle;
mod stack;

pub use minimize::minimize_to_height;
pub use oracle::brute_force_min_partition;
pub use stack::{assignment_stack, AssignmentStack};

use serde::{Deserialize, Serialize};

use crate::graph::SimpleGraph;
use crate::{Result, SebotError};

/// One entropy term. Zero-volume nodes (and zero-volume graphs) carry no
/// structural information and contribute nothing.
pub(crate) fn entropy_term(cut: usize, vol: usize, parent_vol: usize, total_vol: usize) -> f64 {
    if vol == 0 || total_vol == 0 {
        return 0.0;
    }
    debug_assert!(parent_vol >= vol);
    -(cut as f64 / total_vol as f64) * (vol as f64 / parent_vol as f64).log2()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TreeNode {
    pub parent: Option<usize>,
    pub children: Vec<usize>,
    /// Number of graph edges with exactly one endpoint in this node's
    /// member set. For a leaf this is its degree.
    pub cut: usize,
    /// Sum of member degrees. For a leaf, its degree.
    pub vol: usize,
    /// Edges on the longest downward path; 0 for leaves.
    pub height_below: usize,
    /// Smallest graph-node id contained in the member set.
    pub min_leaf: usize,
    /// Graph node id if this tree node is a leaf.
    pub leaf_id: Option<usize>,
    /// Sum of children's cuts; equals `cut` for leaves.
    pub(crate) child_cut_sum: usize,
    pub(crate) alive: bool,
}

impl TreeNode {
    pub fn is_leaf(&self) -> bool {
        self.leaf_id.is_some()
    }
}

/// Rooted encoding tree over a graph's nodes with incrementally maintained
/// cut/volume caches and a cached entropy value.
#[derive(Clone, Debug)]
pub struct EncodingTree {
    nodes: Vec<TreeNode>,
    root: usize,
    leaf_of: Vec<usize>,
    entropy_bits: f64,
    total_vol: usize,
    /// Set when the underlying graph is edgeless; entropy is defined as 0.
    pub zero_volume: bool,
}

impl EncodingTree {
    /// Root with every graph node as a direct leaf child. Its entropy is the
    /// Shannon entropy of the degree distribution.
    pub fn flat(g: &SimpleGraph) -> Self {
        let n = g.num_nodes;
        let mut nodes = Vec::with_capacity(n + 1);
        let root = n;
        for id in 0..n {
            let deg = g.degrees[id];
            nodes.push(TreeNode {
                parent: Some(root),
                children: Vec::new(),
                cut: deg,
                vol: deg,
                height_below: 0,
                min_leaf: id,
                leaf_id: Some(id),
                child_cut_sum: deg,
                alive: true,
            });
        }
        nodes.push(TreeNode {
            parent: None,
            children: (0..n).collect(),
            cut: 0,
            vol: g.volume,
            height_below: if n == 0 { 0 } else { 1 },
            min_leaf: 0,
            leaf_id: None,
            child_cut_sum: g.volume,
            alive: true,
        });
        let mut tree = EncodingTree {
            nodes,
            root,
            leaf_of: (0..n).collect(),
            entropy_bits: 0.0,
            total_vol: g.volume,
            zero_volume: g.volume == 0,
        };
        tree.entropy_bits = structural_entropy(g, &tree);
        tree
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn node(&self, id: usize) -> &TreeNode {
        &self.nodes[id]
    }

    pub fn num_slots(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_alive(&self, id: usize) -> bool {
        id < self.nodes.len() && self.nodes[id].alive
    }

    /// Cached entropy in bits, maintained incrementally across merges and
    /// drops.
    pub fn entropy_bits(&self) -> f64 {
        self.entropy_bits
    }

    pub fn total_vol(&self) -> usize {
        self.total_vol
    }

    /// Tree-leaf id for a graph node.
    pub fn leaf_of(&self, graph_node: usize) -> usize {
        self.leaf_of[graph_node]
    }

    pub fn num_leaves(&self) -> usize {
        self.leaf_of.len()
    }

    pub fn height(&self) -> usize {
        self.nodes[self.root].height_below
    }

    /// Depth of every alive node (root = 0), `usize::MAX` on dead slots.
    pub fn depths(&self) -> Vec<usize> {
        let mut depth = vec![usize::MAX; self.nodes.len()];
        depth[self.root] = 0;
        let mut stack = vec![self.root];
        while let Some(u) = stack.pop() {
            for &c in &self.nodes[u].children {
                depth[c] = depth[u] + 1;
                stack.push(c);
            }
        }
        depth
    }

    /// Member graph-node ids under a tree node, ascending.
    pub fn members(&self, id: usize) -> Vec<usize> {
        let mut out = Vec::new();
        let mut stack = vec![id];
        while let Some(u) = stack.pop() {
            if let Some(leaf) = self.nodes[u].leaf_id {
                out.push(leaf);
            }
            stack.extend(self.nodes[u].children.iter().copied());
        }
        out.sort_unstable();
        out
    }

    /// Root children's member sets as a partition, blocks ordered by their
    /// smallest member.
    pub fn partition(&self) -> Vec<Vec<usize>> {
        let mut kids: Vec<usize> = self.nodes[self.root].children.clone();
        kids.sort_unstable_by_key(|&c| self.nodes[c].min_leaf);
        kids.into_iter().map(|c| self.members(c)).collect()
    }

    fn fresh_node(&mut self, node: TreeNode) -> usize {
        self.nodes.push(node);
        self.nodes.len() - 1
    }

    /// Insert a new root child over two existing root children. `cross` is
    /// the number of graph edges between the two member sets, so the new
    /// node's cut is `cut(c1) + cut(c2) - 2 * cross`. Returns the entropy
    /// delta alongside the new node id.
    pub(crate) fn merge_with_cross(&mut self, c1: usize, c2: usize, cross: usize) -> (usize, f64) {
        let root = self.root;
        debug_assert!(c1 != c2);
        debug_assert_eq!(self.nodes[c1].parent, Some(root));
        debug_assert_eq!(self.nodes[c2].parent, Some(root));
        let (g1, v1) = (self.nodes[c1].cut, self.nodes[c1].vol);
        let (g2, v2) = (self.nodes[c2].cut, self.nodes[c2].vol);
        let cut = g1 + g2 - 2 * cross;
        let vol = v1 + v2;
        let tv = self.total_vol;

        let delta = entropy_term(cut, vol, tv, tv)
            + entropy_term(g1, v1, vol, tv)
            + entropy_term(g2, v2, vol, tv)
            - entropy_term(g1, v1, tv, tv)
            - entropy_term(g2, v2, tv, tv);

        let min_leaf = self.nodes[c1].min_leaf.min(self.nodes[c2].min_leaf);
        let height_below = self.nodes[c1]
            .height_below
            .max(self.nodes[c2].height_below)
            + 1;
        let new_id = self.fresh_node(TreeNode {
            parent: Some(root),
            children: vec![c1, c2],
            cut,
            vol,
            height_below,
            min_leaf,
            leaf_id: None,
            child_cut_sum: g1 + g2,
            alive: true,
        });
        self.nodes[c1].parent = Some(new_id);
        self.nodes[c2].parent = Some(new_id);
        let kids = &mut self.nodes[root].children;
        kids.retain(|&c| c != c1 && c != c2);
        kids.push(new_id);
        self.nodes[root].child_cut_sum = self.nodes[root].child_cut_sum + cut - g1 - g2;
        // The new node sits one level above the taller of the two merged
        // subtrees, so the root height can only grow.
        self.nodes[root].height_below = self.nodes[root].height_below.max(height_below + 1);
        self.entropy_bits += delta;
        (new_id, delta)
    }

    /// Fuse two root children under a new node. The number of edges between
    /// the two member sets is counted by scanning the smaller side.
    pub fn merge(&mut self, g: &SimpleGraph, c1: usize, c2: usize) -> Result<usize> {
        if c1 == c2 {
            return Err(SebotError::Rejected("merge of a node with itself".into()));
        }
        for c in [c1, c2] {
            if !self.is_alive(c) || self.nodes[c].parent != Some(self.root) {
                return Err(SebotError::Rejected(format!(
                    "merge target {c} is not a child of the root"
                )));
            }
        }
        let (small, large) = if self.nodes[c1].vol <= self.nodes[c2].vol {
            (c1, c2)
        } else {
            (c2, c1)
        };
        let small_members = self.members(small);
        let mut in_small = vec![false; g.num_nodes];
        for &m in &small_members {
            in_small[m] = true;
        }
        let mut in_large = vec![false; g.num_nodes];
        for m in self.members(large) {
            in_large[m] = true;
        }
        let mut cross = 0usize;
        for &m in &small_members {
            for &nb in g.neighbors(m) {
                if in_large[nb] {
                    cross += 1;
                }
            }
        }
        Ok(self.merge_with_cross(c1, c2, cross).0)
    }

    /// Entropy change of dropping `v` (reattaching its children to its
    /// parent). Always `>= 0`: children cuts sum to at least the node's own
    /// cut, and the parent's volume dominates the node's.
    pub(crate) fn drop_delta(&self, v: usize) -> f64 {
        let node = &self.nodes[v];
        if node.vol == 0 || self.total_vol == 0 {
            return 0.0;
        }
        let parent_vol = self.nodes[node.parent.expect("drop_delta on root")].vol;
        ((node.child_cut_sum - node.cut) as f64 / self.total_vol as f64)
            * (parent_vol as f64 / node.vol as f64).log2()
    }

    /// Remove internal node `v`, lifting its children to its parent.
    pub fn drop(&mut self, v: usize) -> Result<()> {
        if !self.is_alive(v) {
            return Err(SebotError::Rejected(format!("drop of dead node {v}")));
        }
        if v == self.root {
            return Err(SebotError::Rejected("drop of the root".into()));
        }
        if self.nodes[v].is_leaf() {
            return Err(SebotError::Rejected(format!("drop of leaf {v}")));
        }
        let delta = self.drop_delta(v);
        let parent = self.nodes[v].parent.unwrap();
        let children = std::mem::take(&mut self.nodes[v].children);
        for &c in &children {
            self.nodes[c].parent = Some(parent);
        }
        let (v_cut, v_ccs) = (self.nodes[v].cut, self.nodes[v].child_cut_sum);
        let p = &mut self.nodes[parent];
        p.children.retain(|&c| c != v);
        p.children.extend(children.iter().copied());
        p.child_cut_sum = p.child_cut_sum + v_ccs - v_cut;
        self.nodes[v].alive = false;
        self.nodes[v].parent = None;
        self.recompute_heights_upward(parent);
        self.entropy_bits += delta;
        Ok(())
    }

    pub(crate) fn recompute_heights_upward(&mut self, from: usize) {
        let mut cur = Some(from);
        while let Some(u) = cur {
            let hb = self.nodes[u]
                .children
                .iter()
                .map(|&c| self.nodes[c].height_below + 1)
                .max()
                .unwrap_or(0);
            if self.nodes[u].height_below == hb {
                break;
            }
            self.nodes[u].height_below = hb;
            cur = self.nodes[u].parent;
        }
    }

    /// Pad every leaf shallower than depth `k` with a chain of pass-through
    /// singleton nodes (cut/vol copied) so that all leaves sit at depth
    /// exactly `k`. Pass-through nodes leave the entropy unchanged.
    pub fn canonicalize_to_depth(&mut self, k: usize) -> Result<()> {
        if self.height() > k {
            return Err(SebotError::Rejected(format!(
                "cannot canonicalize a tree of height {} to depth {k}",
                self.height()
            )));
        }
        let depths = self.depths();
        let leaves: Vec<usize> = self.leaf_of.clone();
        for leaf in leaves {
            let mut below = leaf;
            let d = depths[leaf];
            for _ in d..k {
                let parent = self.nodes[below].parent.unwrap();
                let node = &self.nodes[below];
                let (cut, vol, min_leaf) = (node.cut, node.vol, node.min_leaf);
                let hb = node.height_below + 1;
                let q = self.fresh_node(TreeNode {
                    parent: Some(parent),
                    children: vec![below],
                    cut,
                    vol,
                    height_below: hb,
                    min_leaf,
                    leaf_id: None,
                    child_cut_sum: cut,
                    alive: true,
                });
                let pk = &mut self.nodes[parent].children;
                let pos = pk.iter().position(|&c| c == below).unwrap();
                pk[pos] = q;
                self.nodes[below].parent = Some(q);
                below = q;
            }
        }
        // Uniform leaf depth makes every root-to-leaf path length k.
        let mut stack = vec![(self.root, 0usize)];
        let mut ids = Vec::new();
        while let Some((u, d)) = stack.pop() {
            ids.push((u, d));
            for &c in &self.nodes[u].children {
                stack.push((c, d + 1));
            }
        }
        for (u, d) in ids {
            self.nodes[u].height_below = k - d;
        }
        Ok(())
    }

    /// True when every leaf sits at the same depth `k == height()`.
    pub fn is_canonical(&self) -> bool {
        let depths = self.depths();
        let k = self.height();
        self.leaf_of.iter().all(|&l| depths[l] == k)
    }

    /// Alive nodes grouped by depth, each level ordered by smallest member
    /// id. Index 0 is the root level.
    pub fn levels(&self) -> Vec<Vec<usize>> {
        let depths = self.depths();
        let mut levels: Vec<Vec<usize>> = vec![Vec::new(); self.height() + 1];
        for (id, node) in self.nodes.iter().enumerate() {
            if node.alive {
                levels[depths[id]].push(id);
            }
        }
        for level in &mut levels {
            level.sort_unstable_by_key(|&id| self.nodes[id].min_leaf);
        }
        levels
    }
}

/// Exact structural entropy of `g` under tree `t`, recomputed from scratch.
/// The cached value on the tree must agree with this within 1e-9 after any
/// sequence of merges and drops.
pub fn structural_entropy(g: &SimpleGraph, t: &EncodingTree) -> f64 {
    assert_eq!(
        t.num_leaves(),
        g.num_nodes,
        "tree leaves must be bijective with graph nodes"
    );
    if g.volume == 0 {
        return 0.0;
    }
    let tv = g.volume;
    let mut total = 0.0;
    for node in &t.nodes {
        if !node.alive {
            continue;
        }
        let Some(parent) = node.parent else { continue };
        total += entropy_term(node.cut, node.vol, t.nodes[parent].vol, tv);
    }
    total
}

/// Serializable snapshot of an encoding tree, used for the on-disk view
/// cache and the `tree build` CLI export.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TreeJson {
    pub root: usize,
    pub height: usize,
    pub entropy_bits: f64,
    pub zero_volume: bool,
    pub nodes: Vec<TreeJsonNode>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TreeJsonNode {
    pub id: usize,
    pub parent: Option<usize>,
    pub children: Vec<usize>,
    /// Member graph-node ids (for leaves, the single graph node).
    pub leaves: Vec<usize>,
    pub cut: usize,
    pub vol: usize,
}

impl EncodingTree {
    pub fn to_json(&self) -> TreeJson {
        // Compact alive nodes to dense ids.
        let mut remap = vec![usize::MAX; self.nodes.len()];
        let mut next = 0usize;
        for (id, node) in self.nodes.iter().enumerate() {
            if node.alive {
                remap[id] = next;
                next += 1;
            }
        }
        let nodes = self
            .nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| n.alive)
            .map(|(id, n)| TreeJsonNode {
                id: remap[id],
                parent: n.parent.map(|p| remap[p]),
                children: n.children.iter().map(|&c| remap[c]).collect(),
                leaves: self.members(id),
                cut: n.cut,
                vol: n.vol,
            })
            .collect();
        TreeJson {
            root: remap[self.root],
            height: self.height(),
            entropy_bits: self.entropy_bits,
            zero_volume: self.zero_volume,
            nodes,
        }
    }

    pub fn from_json(json: &TreeJson, num_graph_nodes: usize) -> Result<Self> {
        let n = json.nodes.len();
        let mut nodes = vec![
            TreeNode {
                parent: None,
                children: Vec::new(),
                cut: 0,
                vol: 0,
                height_below: 0,
                min_leaf: usize::MAX,
                leaf_id: None,
                child_cut_sum: 0,
                alive: true,
            };
            n
        ];
        let mut leaf_of = vec![usize::MAX; num_graph_nodes];
        for jn in &json.nodes {
            if jn.id >= n {
                return Err(SebotError::InvalidArgument(format!(
                    "tree node id {} out of range",
                    jn.id
                )));
            }
            let node = &mut nodes[jn.id];
            node.parent = jn.parent;
            node.children = jn.children.clone();
            node.cut = jn.cut;
            node.vol = jn.vol;
            node.min_leaf = jn.leaves.iter().copied().min().unwrap_or(usize::MAX);
            if jn.children.is_empty() {
                let &[leaf] = jn.leaves.as_slice() else {
                    return Err(SebotError::InvalidArgument(
                        "childless tree node must hold exactly one graph node".into(),
                    ));
                };
                if leaf >= num_graph_nodes {
                    return Err(SebotError::InvalidArgument(format!(
                        "leaf id {leaf} out of range"
                    )));
                }
                node.leaf_id = Some(leaf);
                leaf_of[leaf] = jn.id;
            }
        }
        if leaf_of.iter().any(|&l| l == usize::MAX) {
            return Err(SebotError::InvalidArgument(
                "tree does not cover every graph node".into(),
            ));
        }
        let mut tree = EncodingTree {
            nodes,
            root: json.root,
            leaf_of,
            entropy_bits: json.entropy_bits,
            total_vol: 0,
            zero_volume: json.zero_volume,
        };
        tree.total_vol = tree.nodes[json.root].vol;
        // Rebuild derived caches bottom-up.
        let order = {
            let mut order = Vec::with_capacity(n);
            let mut stack = vec![json.root];
            while let Some(u) = stack.pop() {
                order.push(u);
                stack.extend(tree.nodes[u].children.iter().copied());
            }
            order
        };
        if order.len() != n {
            return Err(SebotError::InvalidArgument(
                "tree nodes unreachable from root".into(),
            ));
        }
        for &u in order.iter().rev() {
            let (hb, ccs) = {
                let node = &tree.nodes[u];
                let hb = node
                    .children
                    .iter()
                    .map(|&c| tree.nodes[c].height_below + 1)
                    .max()
                    .unwrap_or(0);
                let ccs = if node.children.is_empty() {
                    node.cut
                } else {
                    node.children.iter().map(|&c| tree.nodes[c].cut).sum()
                };
                (hb, ccs)
            };
            tree.nodes[u].height_below = hb;
            tree.nodes[u].child_cut_sum = ccs;
        }
        Ok(tree)
    }
}

#[cfg(test)]
mod tests;
