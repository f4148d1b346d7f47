//! Synthetic hierarchical-community graphs with controllable homophily.
//!
//! Edges come from a hierarchical stochastic block model (edge probability
//! decided by the deepest shared community level), classes from a per-leaf
//! bot fraction, and features from class-conditioned Gaussians. After
//! sampling, inter/intra-class edges are rewired until the measured
//! homophily hits the target, which decouples community structure from
//! class mixing.

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::graph::{collapse_to_undirected, MultiRelGraph, Splits};
use crate::matrix::Matrix;
use crate::{Result, SebotError};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SynthSpec {
    /// Branching factor per hierarchy level, e.g. `[2, 2]` = two top
    /// communities with two sub-communities each.
    pub levels: Vec<usize>,
    pub nodes_per_leaf: usize,
    /// Bot fraction per leaf community, cycled across leaves.
    pub class_mix: Vec<f64>,
    /// Directed edge probability by community distance: index 0 = same
    /// leaf, last index = different top-level community. Length must be
    /// `levels.len() + 1`.
    pub level_edge_probs: Vec<f64>,
    /// Target fraction of same-class edges in the collapsed view.
    pub homophily: f64,
    pub feature_dim: usize,
    /// Distance between the class feature means, in noise standard
    /// deviations.
    pub class_separation: f64,
    pub relations: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            levels: vec![2, 2],
            nodes_per_leaf: 50,
            class_mix: vec![0.85, 0.15],
            level_edge_probs: vec![0.02, 0.004, 0.001],
            homophily: 0.53,
            feature_dim: 16,
            class_separation: 1.0,
            relations: 2,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn num_nodes(&self) -> usize {
        self.levels.iter().product::<usize>() * self.nodes_per_leaf
    }

    fn validate(&self) -> Result<()> {
        if self.levels.is_empty() || self.levels.iter().any(|&b| b == 0) {
            return Err(SebotError::Infeasible(
                "hierarchy levels must be nonempty and positive".into(),
            ));
        }
        if self.nodes_per_leaf == 0 {
            return Err(SebotError::Infeasible("nodes_per_leaf must be positive".into()));
        }
        if self.level_edge_probs.len() != self.levels.len() + 1 {
            return Err(SebotError::Infeasible(format!(
                "need {} edge probabilities (levels + 1), got {}",
                self.levels.len() + 1,
                self.level_edge_probs.len()
            )));
        }
        for probs in [&self.level_edge_probs, &self.class_mix] {
            if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(SebotError::Infeasible("probabilities must lie in [0, 1]".into()));
            }
        }
        if !(0.0..=1.0).contains(&self.homophily) {
            return Err(SebotError::Infeasible("homophily target must lie in [0, 1]".into()));
        }
        if self.class_mix.is_empty() {
            return Err(SebotError::Infeasible("class_mix must be nonempty".into()));
        }
        if self.relations == 0 {
            return Err(SebotError::Infeasible("need at least one relation".into()));
        }
        if self.feature_dim == 0 {
            return Err(SebotError::Infeasible("feature_dim must be positive".into()));
        }
        Ok(())
    }
}

/// Leaf-community index of every node, in node-id order.
pub fn leaf_communities(spec: &SynthSpec) -> Vec<usize> {
    let leaves: usize = spec.levels.iter().product();
    (0..spec.num_nodes()).map(|i| i / spec.nodes_per_leaf % leaves).collect()
}

/// Top-level community of every node (the planted bipartition when the
/// first level has two branches).
pub fn top_communities(spec: &SynthSpec) -> Vec<usize> {
    let leaves: usize = spec.levels.iter().product();
    let per_top = leaves / spec.levels[0];
    leaf_communities(spec)
        .into_iter()
        .map(|leaf| leaf / per_top)
        .collect()
}

pub fn generate(spec: &SynthSpec) -> Result<MultiRelGraph> {
    spec.validate()?;
    let n = spec.num_nodes();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let depth = spec.levels.len();

    // Community path per node, deepest level last.
    let leaves = leaf_communities(spec);
    let path_of = |leaf: usize| -> Vec<usize> {
        let mut path = vec![0; depth];
        let mut rem = leaf;
        for (d, _) in spec.levels.iter().enumerate().rev() {
            path[d] = rem % spec.levels[d];
            rem /= spec.levels[d];
        }
        path
    };
    let paths: Vec<Vec<usize>> = leaves.iter().map(|&l| path_of(l)).collect();

    let labels: Vec<u8> = (0..n)
        .map(|i| {
            let mix = spec.class_mix[leaves[i] % spec.class_mix.len()];
            u8::from(rng.random::<f64>() < mix)
        })
        .collect();

    let shared_prefix = |u: usize, v: usize| -> usize {
        paths[u]
            .iter()
            .zip(&paths[v])
            .take_while(|(a, b)| a == b)
            .count()
    };

    let mut relations = Vec::with_capacity(spec.relations);
    for _ in 0..spec.relations {
        let mut edges = Vec::new();
        for u in 0..n {
            for v in 0..n {
                if u == v {
                    continue;
                }
                let p = spec.level_edge_probs[depth - shared_prefix(u, v)];
                if rng.random::<f64>() < p {
                    edges.push((u, v));
                }
            }
        }
        relations.push(edges);
    }

    rewire_to_homophily(&mut relations, &labels, spec.homophily, n, &shared_prefix, &mut rng)?;

    // Class-conditioned Gaussian features: human mean at the origin, bot
    // mean offset by class_separation along the diagonal direction.
    let offset = spec.class_separation / (spec.feature_dim as f64).sqrt();
    let features = Matrix::from_fn(n, spec.feature_dim, |i, _| {
        let mean = if labels[i] == 1 { offset } else { 0.0 };
        mean + gaussian(&mut rng)
    });

    let mut ids: Vec<usize> = (0..n).collect();
    ids.shuffle(&mut rng);
    let train_end = (n as f64 * 0.7).round() as usize;
    let val_end = train_end + (n as f64 * 0.1).round() as usize;
    let mut splits = Splits {
        train: ids[..train_end].to_vec(),
        val: ids[train_end..val_end.min(n)].to_vec(),
        test: ids[val_end.min(n)..].to_vec(),
    };
    splits.train.sort_unstable();
    splits.val.sort_unstable();
    splits.test.sort_unstable();

    MultiRelGraph::new(n, relations, features, Some(labels), splits)
}

/// Box-Muller standard normal draw.
fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.random::<f64>().max(1e-12);
    let u2: f64 = rng.random::<f64>();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Same-class edge fraction over the collapsed undirected view.
pub fn measure_homophily(g: &MultiRelGraph) -> Result<f64> {
    let labels = g
        .labels
        .as_ref()
        .ok_or_else(|| SebotError::Rejected("homophily needs labels".into()))?;
    let collapsed = collapse_to_undirected(g);
    if collapsed.edges.is_empty() {
        return Err(SebotError::Rejected("homophily undefined on an edgeless graph".into()));
    }
    let same = collapsed
        .edges
        .iter()
        .filter(|&&(u, v)| labels[u] == labels[v])
        .count();
    Ok(same as f64 / collapsed.edges.len() as f64)
}

fn collapsed_homophily(relations: &[Vec<(usize, usize)>], labels: &[u8]) -> Option<f64> {
    let mut set = std::collections::BTreeSet::new();
    for edges in relations {
        for &(u, v) in edges {
            if u != v {
                set.insert((u.min(v), u.max(v)));
            }
        }
    }
    if set.is_empty() {
        return None;
    }
    let same = set.iter().filter(|&&(u, v)| labels[u] == labels[v]).count();
    Some(same as f64 / set.len() as f64)
}

/// Re-aim directed edges one at a time until the collapsed same-class edge
/// fraction sits within tolerance of the target. Replacement destinations
/// keep the edge's community distance (same shared-prefix level) whenever a
/// class-appropriate node exists there, so the planted hierarchy survives
/// the class-mixing adjustment. Graphs with no edges are left untouched
/// (downstream volume checks reject them anyway).
fn rewire_to_homophily(
    relations: &mut [Vec<(usize, usize)>],
    labels: &[u8],
    target: f64,
    n: usize,
    shared_prefix: &dyn Fn(usize, usize) -> usize,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    let Some(mut current) = collapsed_homophily(relations, labels) else {
        return Ok(());
    };
    // One rewire moves the fraction by about 1/edges, so the tolerance
    // cannot be finer than the collapsed edge granularity.
    let collapsed_edges = {
        let mut set = std::collections::BTreeSet::new();
        for edges in relations.iter() {
            for &(u, v) in edges.iter() {
                if u != v {
                    set.insert((u.min(v), u.max(v)));
                }
            }
        }
        set.len()
    };
    let tol = (1.0 / collapsed_edges as f64).max(0.02);
    let class_members: [Vec<usize>; 2] = [
        (0..n).filter(|&i| labels[i] == 0).collect(),
        (0..n).filter(|&i| labels[i] == 1).collect(),
    ];
    let total_edges: usize = relations.iter().map(|e| e.len()).sum();
    let max_rewires = 40 * total_edges.max(1);
    let mut budget = max_rewires;
    while (current - target).abs() > tol {
        if budget == 0 {
            return Err(SebotError::Infeasible(format!(
                "homophily target {target} unreachable: stuck at {current:.3} after {max_rewires} rewires"
            )));
        }
        budget -= 1;
        let raise = current < target;
        // Find a directed edge of the overrepresented kind and re-aim its
        // destination into the class that moves the fraction the right way.
        for _ in 0..64 {
            let r = rng.random_range(0..relations.len());
            if relations[r].is_empty() {
                continue;
            }
            let e = rng.random_range(0..relations[r].len());
            let (u, v) = relations[r][e];
            if (labels[u] == labels[v]) == raise {
                continue; // already the kind we want more of
            }
            let want_class = if raise { labels[u] as usize } else { 1 - labels[u] as usize };
            let wanted: Vec<usize> = {
                // Same community distance first, any node of the class as
                // a fallback.
                let level = shared_prefix(u, v);
                let same_level: Vec<usize> = class_members[want_class]
                    .iter()
                    .copied()
                    .filter(|&w| w != u && shared_prefix(u, w) == level)
                    .collect();
                if same_level.is_empty() {
                    class_members[want_class]
                        .iter()
                        .copied()
                        .filter(|&w| w != u)
                        .collect()
                } else {
                    same_level
                }
            };
            if wanted.is_empty() {
                return Err(SebotError::Infeasible(format!(
                    "homophily target {target} unreachable: no nodes of class {want_class} to rewire onto"
                )));
            }
            let w = wanted[rng.random_range(0..wanted.len())];
            relations[r][e] = (u, w);
            current = collapsed_homophily(relations, labels)
                .expect("edges cannot vanish during rewiring");
            break;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::entropy::minimize_to_height;
    use crate::graph::collapse_to_undirected;

    #[test]
    fn generated_homophily_hits_target() {
        // Table-style target 0.53 on a 200-node, 2-relation graph.
        let spec = SynthSpec {
            seed: 3,
            ..SynthSpec::default()
        };
        let g = generate(&spec).unwrap();
        assert_eq!(g.num_nodes, 200);
        assert_eq!(g.num_relations(), 2);
        let h = measure_homophily(&g).unwrap();
        assert!((0.48..=0.58).contains(&h), "homophily {h}");
    }

    #[test]
    fn zero_probability_spec_yields_empty_graph() {
        let spec = SynthSpec {
            level_edge_probs: vec![0.0, 0.0, 0.0],
            ..SynthSpec::default()
        };
        let g = generate(&spec).unwrap();
        assert_eq!(g.total_edges(), 0);
        // Downstream volume > 0 checks reject it.
        let collapsed = collapse_to_undirected(&g);
        assert!(minimize_to_height(&collapsed, 2).is_err());
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = SynthSpec {
            seed: 11,
            ..SynthSpec::default()
        };
        let a = generate(&spec).unwrap();
        let b = generate(&spec).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn splits_are_disjoint_and_exhaustive() {
        let g = generate(&SynthSpec { seed: 5, ..SynthSpec::default() }).unwrap();
        let mut all: Vec<usize> = g
            .splits
            .train
            .iter()
            .chain(&g.splits.val)
            .chain(&g.splits.test)
            .copied()
            .collect();
        all.sort_unstable();
        assert_eq!(all, (0..g.num_nodes).collect::<Vec<_>>());
        assert_eq!(g.splits.train.len(), 140);
        assert_eq!(g.splits.val.len(), 20);
        assert_eq!(g.splits.test.len(), 40);
    }

    #[test]
    fn measure_homophily_hand_cases() {
        let two_same = MultiRelGraph::new(
            2,
            vec![vec![(0, 1)]],
            Matrix::zeros(2, 1),
            Some(vec![1, 1]),
            Splits::default(),
        )
        .unwrap();
        assert_eq!(measure_homophily(&two_same).unwrap(), 1.0);

        // Bipartite human-bot star.
        let star = MultiRelGraph::new(
            4,
            vec![vec![(0, 1), (0, 2), (0, 3)]],
            Matrix::zeros(4, 1),
            Some(vec![1, 0, 0, 0]),
            Splits::default(),
        )
        .unwrap();
        assert_eq!(measure_homophily(&star).unwrap(), 0.0);

        let unlabeled = MultiRelGraph::new(
            2,
            vec![vec![(0, 1)]],
            Matrix::zeros(2, 1),
            None,
            Splits::default(),
        )
        .unwrap();
        assert!(measure_homophily(&unlabeled).is_err());
    }

    #[test]
    fn infeasible_targets_are_rejected() {
        // Single-class graph cannot reach low homophily.
        let spec = SynthSpec {
            class_mix: vec![1.0],
            homophily: 0.2,
            ..SynthSpec::default()
        };
        assert!(matches!(generate(&spec), Err(SebotError::Infeasible(_))));
    }

    /// The planted top-level bipartition is recoverable from the collapsed
    /// view by the k=2 entropy minimizer with >= 0.9 node accuracy.
    #[test]
    fn planted_hierarchy_is_recoverable() {
        let spec = SynthSpec { seed: 7, ..SynthSpec::default() };
        let g = generate(&spec).unwrap();
        let tops = top_communities(&spec);
        let collapsed = collapse_to_undirected(&g);
        let tree = minimize_to_height(&collapsed, 2).unwrap();
        let partition = tree.partition();

        // Map each block to its majority planted community and count hits.
        let mut correct = 0usize;
        for block in &partition {
            let ones = block.iter().filter(|&&i| tops[i] == 1).count();
            correct += ones.max(block.len() - ones);
        }
        let accuracy = correct as f64 / g.num_nodes as f64;
        assert!(accuracy >= 0.9, "partition accuracy {accuracy}");
    }
}
