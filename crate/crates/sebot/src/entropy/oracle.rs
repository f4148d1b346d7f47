//! Exhaustive height-2 minimizer for small graphs.
//!
//! Enumerates every set partition of the node set (restricted growth
//! strings), evaluates each as a root → communities → leaves tree, and
//! returns the minimum. Independent of the incremental tree machinery, so
//! it doubles as the correctness oracle for the greedy minimizer.

use crate::entropy::entropy_term;
use crate::graph::SimpleGraph;
use crate::{Result, SebotError};

pub const BRUTE_FORCE_MAX_NODES: usize = 10;

/// Globally optimal height-2 partition and its entropy in bits. Blocks are
/// ordered by smallest member; ties resolve to the first partition in
/// restricted-growth-string order.
pub fn brute_force_min_partition(g: &SimpleGraph) -> Result<(Vec<Vec<usize>>, f64)> {
    let n = g.num_nodes;
    if n == 0 {
        return Err(SebotError::Rejected("empty graph".into()));
    }
    if n > BRUTE_FORCE_MAX_NODES {
        return Err(SebotError::Rejected(format!(
            "brute-force enumeration limited to {BRUTE_FORCE_MAX_NODES} nodes, got {n}"
        )));
    }

    let mut assign = vec![0usize; n];
    let mut best: Option<(Vec<usize>, f64)> = None;
    loop {
        let h = partition_entropy(g, &assign);
        if best.as_ref().is_none_or(|(_, bh)| h < bh - 1e-15) {
            best = Some((assign.clone(), h));
        }
        if !next_restricted_growth(&mut assign) {
            break;
        }
    }

    let (assign, entropy) = best.unwrap();
    let blocks = assign.iter().copied().max().unwrap() + 1;
    let mut partition: Vec<Vec<usize>> = vec![Vec::new(); blocks];
    for (node, &b) in assign.iter().enumerate() {
        partition[b].push(node);
    }
    // RGS blocks are already ordered by smallest member.
    Ok((partition, entropy))
}

/// Structural entropy of the height-2 tree induced by a block assignment.
fn partition_entropy(g: &SimpleGraph, assign: &[usize]) -> f64 {
    let tv = g.volume;
    if tv == 0 {
        return 0.0;
    }
    let blocks = assign.iter().copied().max().unwrap() + 1;
    let mut vol = vec![0usize; blocks];
    let mut cut = vec![0usize; blocks];
    for (node, &b) in assign.iter().enumerate() {
        vol[b] += g.degrees[node];
    }
    for &(u, v) in &g.edges {
        if assign[u] != assign[v] {
            cut[assign[u]] += 1;
            cut[assign[v]] += 1;
        }
    }
    let mut h = 0.0;
    for b in 0..blocks {
        h += entropy_term(cut[b], vol[b], tv, tv);
    }
    for (node, &b) in assign.iter().enumerate() {
        let d = g.degrees[node];
        h += entropy_term(d, d, vol[b], tv);
    }
    h
}

/// Advance a restricted growth string in place; false once exhausted.
/// RGS invariant: `a[0] = 0` and `a[i] <= max(a[0..i]) + 1`.
fn next_restricted_growth(a: &mut [usize]) -> bool {
    let n = a.len();
    for i in (1..n).rev() {
        let max_prefix = a[..i].iter().copied().max().unwrap();
        if a[i] <= max_prefix {
            a[i] += 1;
            for x in &mut a[i + 1..] {
                *x = 0;
            }
            return true;
        }
    }
    false
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rgs_counts_bell_numbers() {
        // Bell numbers: partitions of 1..=5 element sets.
        for (n, bell) in [(1, 1usize), (2, 2), (3, 5), (4, 15), (5, 52)] {
            let mut a = vec![0usize; n];
            let mut count = 1;
            while next_restricted_growth(&mut a) {
                count += 1;
            }
            assert_eq!(count, bell, "n = {n}");
        }
    }
}
