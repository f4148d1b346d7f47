//! One-hot cluster assignment matrices extracted from a canonical tree.

use serde::{Deserialize, Serialize};

use crate::entropy::EncodingTree;
use crate::matrix::Matrix;
use crate::{Result, SebotError};

/// Per-level one-hot assignment matrices. `levels[0]` maps graph leaves to
/// their depth-(k-1) parents; the last level maps the root's children to
/// the root, so the product of all levels is the n x 1 ones matrix.
///
/// Rows and columns at every level are ordered by the smallest graph-node
/// id contained in the cluster (for leaves that is the node id itself).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AssignmentStack {
    pub levels: Vec<Matrix>,
}

impl AssignmentStack {
    pub fn height(&self) -> usize {
        self.levels.len()
    }

    /// Number of clusters after applying the first `t` levels.
    pub fn width_after(&self, t: usize) -> usize {
        if t == 0 {
            self.levels[0].rows()
        } else {
            self.levels[t - 1].cols()
        }
    }
}

/// Extract the assignment stack of a canonical (uniform leaf depth) tree.
pub fn assignment_stack(tree: &EncodingTree) -> Result<AssignmentStack> {
    if !tree.is_canonical() {
        return Err(SebotError::Rejected(
            "assignment stack requires a canonical tree (uniform leaf depth)".into(),
        ));
    }
    let levels_by_depth = tree.levels();
    let k = tree.height();
    let mut levels = Vec::with_capacity(k);
    // Depth k holds the leaves; walk up to depth 0 (the root).
    for depth in (1..=k).rev() {
        let lower = &levels_by_depth[depth];
        let upper = &levels_by_depth[depth - 1];
        let mut col_of = std::collections::HashMap::with_capacity(upper.len());
        for (j, &id) in upper.iter().enumerate() {
            col_of.insert(id, j);
        }
        let mut s = Matrix::zeros(lower.len(), upper.len());
        for (i, &id) in lower.iter().enumerate() {
            let parent = tree.node(id).parent.expect("non-root level");
            s.set(i, col_of[&parent], 1.0);
        }
        levels.push(s);
    }
    Ok(AssignmentStack { levels })
}
