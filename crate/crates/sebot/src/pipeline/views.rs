//! Per-run graph views: the collapsed whole-graph tree, one tree per ego
//! subgraph, and the augmented relational view. Tree construction is the
//! expensive part, so prepared views are cached on disk keyed by
//! `(dataset hash, k, m, p, seed, augmentation)`.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataio::Dataset;
use crate::entropy::{
    assignment_stack, minimize_to_height, AssignmentStack, EncodingTree, TreeJson,
};
use crate::graph::{
    add_edges, collapse_to_undirected, drop_edges, drop_feature_entries, ego_subgraph,
    mask_feature_columns, EgoSubgraph, MultiRelGraph, SimpleGraph,
};
use crate::matrix::Matrix;
use crate::pipeline::{subseed, AugMode, TrainConfig};
use crate::{Result, SebotError};

#[derive(Clone, Debug)]
pub struct SubgraphView {
    pub center: usize,
    pub sub: EgoSubgraph,
    pub tree: EncodingTree,
    pub stack: AssignmentStack,
}

#[derive(Clone, Debug)]
pub struct Views {
    pub collapsed: SimpleGraph,
    pub graph_tree: EncodingTree,
    pub graph_stack: AssignmentStack,
    /// One view per node, indexed by center id.
    pub subviews: Vec<SubgraphView>,
    /// Augmented multi-relational view for the relational encoder.
    pub rel_graph: MultiRelGraph,
    /// Features the relational encoder consumes (masked under the feature
    /// augmentation modes, otherwise the originals).
    pub rel_features: Matrix,
    /// True when this call was served from the on-disk cache.
    pub from_cache: bool,
}

/// Height-k tree for a (sub)graph: the greedy minimizer when there is
/// structure to minimize, a padded flat tree for edgeless graphs, always
/// canonical at depth k.
pub fn tree_for(graph: &SimpleGraph, k: usize) -> Result<EncodingTree> {
    if graph.volume == 0 {
        let mut tree = EncodingTree::flat(graph);
        tree.canonicalize_to_depth(k)?;
        Ok(tree)
    } else {
        minimize_to_height(graph, k)
    }
}

#[derive(Serialize, Deserialize)]
struct CachedSubView {
    center: usize,
    nodes: Vec<usize>,
    tree: TreeJson,
}

#[derive(Serialize, Deserialize)]
struct CachedViews {
    dataset_hash: String,
    graph_tree: TreeJson,
    subs: Vec<CachedSubView>,
    rel_edges: Vec<Vec<(usize, usize)>>,
}

fn cache_path(dataset: &Dataset, cfg: &TrainConfig) -> Option<PathBuf> {
    let dir = dataset.cache_dir.as_ref()?;
    Some(dir.join(format!(
        "views-{}-k{}-m{}-p{}-s{}-{}.json",
        &dataset.hash[..16.min(dataset.hash.len())],
        cfg.tree_height,
        cfg.subgraph_order,
        cfg.drop_prob,
        cfg.seed,
        cfg.ablation.aug_mode.tag()
    )))
}

/// Features fed to the relational encoder under the configured
/// augmentation; deterministic given the run seed.
fn relational_features(g: &MultiRelGraph, cfg: &TrainConfig) -> Matrix {
    let seed = subseed(cfg.seed, "aug-features");
    match cfg.ablation.aug_mode {
        AugMode::FeatureMask => mask_feature_columns(&g.features, cfg.drop_prob, seed),
        AugMode::FeatureDrop => drop_feature_entries(&g.features, cfg.drop_prob, seed),
        AugMode::EdgeDrop | AugMode::EdgeAdd => g.features.clone(),
    }
}

fn relational_graph(g: &MultiRelGraph, cfg: &TrainConfig) -> MultiRelGraph {
    let seed = subseed(cfg.seed, "aug-edges");
    match cfg.ablation.aug_mode {
        AugMode::EdgeDrop => drop_edges(g, cfg.drop_prob, seed),
        AugMode::EdgeAdd => add_edges(g, cfg.drop_prob, seed),
        AugMode::FeatureMask | AugMode::FeatureDrop => g.clone(),
    }
}

/// Build (or reload) all three views for a run. Subgraph trees are built
/// in parallel; everything is deterministic under the config seed.
pub fn prepare_views(dataset: &Dataset, cfg: &TrainConfig) -> Result<Views> {
    cfg.validate()?;
    let g = &dataset.graph;
    let k = cfg.tree_height;

    if let Some(path) = cache_path(dataset, cfg) {
        if path.exists() {
            match load_cached(dataset, cfg, &path) {
                Ok(views) => return Ok(views),
                Err(_) => {
                    // Stale or corrupt cache entry: rebuild it below.
                    let _ = std::fs::remove_file(&path);
                }
            }
        }
    }

    let collapsed = collapse_to_undirected(g);
    let graph_tree = tree_for(&collapsed, k)?;
    let graph_stack = assignment_stack(&graph_tree)?;

    let subviews: Vec<SubgraphView> = (0..g.num_nodes)
        .into_par_iter()
        .map(|center| {
            let sub = ego_subgraph(&collapsed, center, cfg.subgraph_order);
            let tree = tree_for(&sub.graph, k)?;
            let stack = assignment_stack(&tree)?;
            Ok(SubgraphView {
                center,
                sub,
                tree,
                stack,
            })
        })
        .collect::<Result<_>>()?;

    let rel_graph = relational_graph(g, cfg);
    let rel_features = relational_features(g, cfg);

    let views = Views {
        collapsed,
        graph_tree,
        graph_stack,
        subviews,
        rel_graph,
        rel_features,
        from_cache: false,
    };
    if let Some(path) = cache_path(dataset, cfg) {
        let _ = write_cache(dataset, &views, &path);
    }
    Ok(views)
}

fn write_cache(dataset: &Dataset, views: &Views, path: &PathBuf) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| SebotError::io(parent, e))?;
    }
    let cached = CachedViews {
        dataset_hash: dataset.hash.clone(),
        graph_tree: views.graph_tree.to_json(),
        subs: views
            .subviews
            .iter()
            .map(|sv| CachedSubView {
                center: sv.center,
                nodes: sv.sub.to_global.clone(),
                tree: sv.tree.to_json(),
            })
            .collect(),
        rel_edges: views.rel_graph.relations.clone(),
    };
    let file = File::create(path).map_err(|e| SebotError::io(path, e))?;
    serde_json::to_writer(BufWriter::new(file), &cached)?;
    Ok(())
}

fn load_cached(dataset: &Dataset, cfg: &TrainConfig, path: &PathBuf) -> Result<Views> {
    let file = File::open(path).map_err(|e| SebotError::io(path, e))?;
    let cached: CachedViews = serde_json::from_reader(BufReader::new(file))?;
    if cached.dataset_hash != dataset.hash {
        return Err(SebotError::InvalidArgument("cache hash mismatch".into()));
    }
    let g = &dataset.graph;
    let collapsed = collapse_to_undirected(g);
    let graph_tree = EncodingTree::from_json(&cached.graph_tree, g.num_nodes)?;
    let graph_stack = assignment_stack(&graph_tree)?;
    if cached.subs.len() != g.num_nodes {
        return Err(SebotError::InvalidArgument("cache subview count mismatch".into()));
    }
    let mut subviews = Vec::with_capacity(cached.subs.len());
    for (center, cs) in cached.subs.into_iter().enumerate() {
        if cs.center != center {
            return Err(SebotError::InvalidArgument("cache subview order mismatch".into()));
        }
        let mut local = std::collections::HashMap::new();
        for (li, &gi) in cs.nodes.iter().enumerate() {
            local.insert(gi, li);
        }
        let edges = collapsed.edges.iter().filter_map(|&(u, v)| {
            match (local.get(&u), local.get(&v)) {
                (Some(&a), Some(&b)) => Some((a, b)),
                _ => None,
            }
        });
        let sub = EgoSubgraph {
            graph: SimpleGraph::from_edges(cs.nodes.len(), edges),
            center_local_id: *local.get(&center).ok_or_else(|| {
                SebotError::InvalidArgument("cache subview misses its center".into())
            })?,
            to_global: cs.nodes,
        };
        let tree = EncodingTree::from_json(&cs.tree, sub.graph.num_nodes)?;
        let stack = assignment_stack(&tree)?;
        subviews.push(SubgraphView {
            center,
            sub,
            tree,
            stack,
        });
    }
    let rel_graph = MultiRelGraph {
        num_nodes: g.num_nodes,
        relations: cached.rel_edges,
        features: g.features.clone(),
        labels: g.labels.clone(),
        splits: g.splits.clone(),
    };
    let rel_features = relational_features(g, cfg);
    Ok(Views {
        collapsed,
        graph_tree,
        graph_stack,
        subviews,
        rel_graph,
        rel_features,
        from_cache: true,
    })
}
