//! Wall-clock benchmark for fixed-height tree construction across a sweep
//! of edge counts, with the fitted log-log slope of time versus edges.

use std::time::Instant;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::entropy::minimize_to_height;
use crate::graph::SimpleGraph;
use crate::Result;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BenchRow {
    pub nodes: usize,
    pub edges: usize,
    pub seconds: f64,
}

/// Random sparse graph with exactly `m` distinct undirected edges over
/// `m / 8` nodes (average degree 16).
fn bench_graph(m: usize, seed: u64) -> SimpleGraph {
    let n = (m / 8).max(8);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut set = std::collections::BTreeSet::new();
    while set.len() < m {
        let u = rng.random_range(0..n);
        let v = rng.random_range(0..n);
        if u != v {
            set.insert((u.min(v), u.max(v)));
        }
    }
    SimpleGraph::from_edges(n, set)
}

/// Time `minimize_to_height` over the requested edge counts and fit the
/// slope of `ln(seconds)` against `ln(edges)` by least squares. Small
/// sizes are repeated to push timings above the clock noise floor.
pub fn bench_entropy(sizes: &[usize], k: usize, seed: u64) -> Result<(Vec<BenchRow>, f64)> {
    let mut rows = Vec::with_capacity(sizes.len());
    for &m in sizes {
        let g = bench_graph(m, seed);
        // Warm-up pass keeps allocator effects out of the first sample.
        let _ = minimize_to_height(&g, k)?;
        let reps = (50_000 / m).clamp(1, 10);
        let start = Instant::now();
        for _ in 0..reps {
            let tree = minimize_to_height(&g, k)?;
            std::hint::black_box(tree.entropy_bits());
        }
        let seconds = start.elapsed().as_secs_f64() / reps as f64;
        rows.push(BenchRow {
            nodes: g.num_nodes,
            edges: m,
            seconds,
        });
    }
    Ok((rows.clone(), fit_loglog_slope(&rows)))
}

fn fit_loglog_slope(rows: &[BenchRow]) -> f64 {
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .map(|r| ((r.edges as f64).ln(), r.seconds.max(1e-9).ln()))
        .collect();
    let n = pts.len() as f64;
    let (sx, sy): (f64, f64) = pts.iter().fold((0.0, 0.0), |(a, b), (x, y)| (a + x, b + y));
    let sxx: f64 = pts.iter().map(|(x, _)| x * x).sum();
    let sxy: f64 = pts.iter().map(|(x, y)| x * y).sum();
    (n * sxy - sx * sy) / (n * sxx - sx * sx)
}

pub fn bench_csv(rows: &[BenchRow]) -> String {
    let mut out = String::from("nodes,edges,seconds\n");
    for r in rows {
        out.push_str(&format!("{},{},{}\n", r.nodes, r.edges, r.seconds));
    }
    out
}
