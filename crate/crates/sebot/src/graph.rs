//! Multi-relational attributed graph storage and view generation.
//!
//! All graph types are immutable after construction; view generation
//! (undirected collapse, ego subgraphs, edge dropping and the other
//! augmentations) returns new values.

use std::collections::{BTreeSet, VecDeque};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::matrix::Matrix;

/// Train/val/test node-id sets. Pairwise disjoint, each sorted ascending.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl Splits {
    pub fn is_empty(&self) -> bool {
        self.train.is_empty() && self.val.is_empty() && self.test.is_empty()
    }

    pub fn validate(&self, num_nodes: usize) -> crate::Result<()> {
        let mut seen = vec![false; num_nodes];
        for (name, ids) in [
            ("train", &self.train),
            ("val", &self.val),
            ("test", &self.test),
        ] {
            for &id in ids {
                if id >= num_nodes {
                    return Err(crate::SebotError::InvalidArgument(format!(
                        "{name} split references node {id} but graph has {num_nodes} nodes"
                    )));
                }
                if seen[id] {
                    return Err(crate::SebotError::InvalidArgument(format!(
                        "node {id} appears in more than one split"
                    )));
                }
                seen[id] = true;
            }
        }
        Ok(())
    }
}

/// Attributed, directed, multi-relational graph: the raw input of the whole
/// pipeline. Edges are per-relation lists of `(src, dst)` pairs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultiRelGraph {
    pub num_nodes: usize,
    pub relations: Vec<Vec<(usize, usize)>>,
    pub features: Matrix,
    /// Per-node class, human = 0, bot = 1. `None` for unlabeled data.
    pub labels: Option<Vec<u8>>,
    pub splits: Splits,
}

impl MultiRelGraph {
    pub fn new(
        num_nodes: usize,
        relations: Vec<Vec<(usize, usize)>>,
        features: Matrix,
        labels: Option<Vec<u8>>,
        splits: Splits,
    ) -> crate::Result<Self> {
        if relations.is_empty() {
            return Err(crate::SebotError::InvalidArgument(
                "graph needs at least one relation".into(),
            ));
        }
        if features.rows() != num_nodes {
            return Err(crate::SebotError::InvalidArgument(format!(
                "feature matrix has {} rows for {} nodes",
                features.rows(),
                num_nodes
            )));
        }
        for (r, edges) in relations.iter().enumerate() {
            for &(u, v) in edges {
                if u >= num_nodes || v >= num_nodes {
                    return Err(crate::SebotError::InvalidArgument(format!(
                        "relation {r} has edge ({u}, {v}) out of range for {num_nodes} nodes"
                    )));
                }
            }
        }
        if let Some(labels) = &labels {
            if labels.len() != num_nodes {
                return Err(crate::SebotError::InvalidArgument(format!(
                    "{} labels for {} nodes",
                    labels.len(),
                    num_nodes
                )));
            }
            if let Some(bad) = labels.iter().find(|&&l| l > 1) {
                return Err(crate::SebotError::InvalidArgument(format!(
                    "label {bad} outside {{0, 1}}"
                )));
            }
        }
        splits.validate(num_nodes)?;
        Ok(MultiRelGraph {
            num_nodes,
            relations,
            features,
            labels,
            splits,
        })
    }

    pub fn num_relations(&self) -> usize {
        self.relations.len()
    }

    pub fn total_edges(&self) -> usize {
        self.relations.iter().map(|e| e.len()).sum()
    }
}

/// Undirected simple graph (no self-loops, no duplicate edges). Edges are
/// stored smaller endpoint first, sorted; `volume == 2 * edges.len()`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimpleGraph {
    pub num_nodes: usize,
    pub edges: Vec<(usize, usize)>,
    pub degrees: Vec<usize>,
    pub volume: usize,
    #[serde(skip)]
    adjacency: Vec<Vec<usize>>,
}

impl SimpleGraph {
    pub fn from_edges(num_nodes: usize, raw: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut set = BTreeSet::new();
        for (u, v) in raw {
            assert!(u < num_nodes && v < num_nodes, "edge endpoint out of range");
            if u == v {
                continue;
            }
            set.insert((u.min(v), u.max(v)));
        }
        let edges: Vec<(usize, usize)> = set.into_iter().collect();
        let mut degrees = vec![0usize; num_nodes];
        let mut adjacency = vec![Vec::new(); num_nodes];
        for &(u, v) in &edges {
            degrees[u] += 1;
            degrees[v] += 1;
            adjacency[u].push(v);
            adjacency[v].push(u);
        }
        let volume = 2 * edges.len();
        SimpleGraph {
            num_nodes,
            edges,
            degrees,
            volume,
            adjacency,
        }
    }

    /// Rebuild adjacency/degree caches, e.g. after deserialization.
    pub fn rebuild_caches(&mut self) {
        *self = SimpleGraph::from_edges(self.num_nodes, self.edges.iter().copied());
    }

    pub fn neighbors(&self, node: usize) -> &[usize] {
        &self.adjacency[node]
    }

    /// Dense symmetric 0/1 adjacency matrix.
    pub fn dense_adjacency(&self) -> Matrix {
        let mut a = Matrix::zeros(self.num_nodes, self.num_nodes);
        for &(u, v) in &self.edges {
            a.set(u, v, 1.0);
            a.set(v, u, 1.0);
        }
        a
    }
}

/// Induced subgraph of everything within `m` hops of a center node, with a
/// local-id ↔ global-id mapping. Local ids follow ascending global id.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EgoSubgraph {
    pub graph: SimpleGraph,
    pub center_local_id: usize,
    pub to_global: Vec<usize>,
}

/// Deduplicated, symmetrized union of all relations' edges with self-loops
/// removed. Relations contribute with equal weight.
pub fn collapse_to_undirected(g: &MultiRelGraph) -> SimpleGraph {
    let all = g
        .relations
        .iter()
        .flat_map(|edges| edges.iter().copied());
    SimpleGraph::from_edges(g.num_nodes, all)
}

/// BFS out to distance `m` from `center` and take the induced subgraph.
pub fn ego_subgraph(g: &SimpleGraph, center: usize, m: usize) -> EgoSubgraph {
    assert!(center < g.num_nodes, "ego center {center} out of range");
    let mut dist = vec![usize::MAX; g.num_nodes];
    dist[center] = 0;
    let mut queue = VecDeque::from([center]);
    let mut members = vec![center];
    while let Some(u) = queue.pop_front() {
        if dist[u] == m {
            continue;
        }
        for &v in g.neighbors(u) {
            if dist[v] == usize::MAX {
                dist[v] = dist[u] + 1;
                members.push(v);
                queue.push_back(v);
            }
        }
    }
    members.sort_unstable();
    let mut local = vec![usize::MAX; g.num_nodes];
    for (li, &gi) in members.iter().enumerate() {
        local[gi] = li;
    }
    let edges = g.edges.iter().filter_map(|&(u, v)| {
        if local[u] != usize::MAX && local[v] != usize::MAX {
            Some((local[u], local[v]))
        } else {
            None
        }
    });
    let graph = SimpleGraph::from_edges(members.len(), edges);
    EgoSubgraph {
        graph,
        center_local_id: local[center],
        to_global: members,
    }
}

/// Independently retain each directed edge with probability `1 - p`.
/// Features, labels and splits are shared untouched.
pub fn drop_edges(g: &MultiRelGraph, p: f64, seed: u64) -> MultiRelGraph {
    assert!((0.0..=1.0).contains(&p), "drop probability {p} outside [0, 1]");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let relations = g
        .relations
        .iter()
        .map(|edges| {
            edges
                .iter()
                .copied()
                .filter(|_| rng.random::<f64>() >= p)
                .collect()
        })
        .collect();
    MultiRelGraph {
        num_nodes: g.num_nodes,
        relations,
        features: g.features.clone(),
        labels: g.labels.clone(),
        splits: g.splits.clone(),
    }
}

/// Insert `round(p * |E_r|)` random directed edges per relation (endpoints
/// uniform, self-loops allowed to stay consistent with raw platform dumps).
pub fn add_edges(g: &MultiRelGraph, p: f64, seed: u64) -> MultiRelGraph {
    assert!((0.0..=1.0).contains(&p), "add rate {p} outside [0, 1]");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let relations = g
        .relations
        .iter()
        .map(|edges| {
            let mut out = edges.clone();
            let extra = (p * edges.len() as f64).round() as usize;
            for _ in 0..extra {
                let u = rng.random_range(0..g.num_nodes);
                let v = rng.random_range(0..g.num_nodes);
                out.push((u, v));
            }
            out
        })
        .collect();
    MultiRelGraph {
        num_nodes: g.num_nodes,
        relations,
        features: g.features.clone(),
        labels: g.labels.clone(),
        splits: g.splits.clone(),
    }
}

/// Zero whole feature columns with probability `p` each.
pub fn mask_feature_columns(features: &Matrix, p: f64, seed: u64) -> Matrix {
    assert!((0.0..=1.0).contains(&p), "mask rate {p} outside [0, 1]");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let keep: Vec<bool> = (0..features.cols()).map(|_| rng.random::<f64>() >= p).collect();
    Matrix::from_fn(features.rows(), features.cols(), |i, j| {
        if keep[j] {
            features.get(i, j)
        } else {
            0.0
        }
    })
}

/// Zero individual feature entries with probability `p` each.
pub fn drop_feature_entries(features: &Matrix, p: f64, seed: u64) -> Matrix {
    assert!((0.0..=1.0).contains(&p), "drop rate {p} outside [0, 1]");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Matrix::from_fn(features.rows(), features.cols(), |i, j| {
        let keep = rng.random::<f64>() >= p;
        // from_fn iterates row-major, so draws line up with entries.
        let _ = (i, j);
        if keep {
            features.get(i, j)
        } else {
            0.0
        }
    })
}
