//! Tree-guided pooling encoders.
//!
//! Both encoders consume the one-hot assignment stack of an encoding tree.
//! [`HierarchicalEncoder`] pools the whole graph level by level to the root
//! and unpools back down with the same assignments, yielding one hidden row
//! per node. [`SubgraphEncoder`] pools an ego subgraph upward only, reading
//! out (mean or sum) at every level and concatenating the level readouts
//! into a single row.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Init, ParamStore, Tape, Tensor2};
use crate::entropy::AssignmentStack;
use crate::matrix::Matrix;

/// Mutable state threaded through a recorded forward pass: training mode,
/// the dropout rate, and the seeded noise stream.
pub struct ForwardCtx<'a> {
    pub training: bool,
    pub dropout: f64,
    pub rng: &'a mut ChaCha8Rng,
}

impl ForwardCtx<'_> {
    pub fn eval(rng: &mut ChaCha8Rng) -> ForwardCtx<'_> {
        ForwardCtx {
            training: false,
            dropout: 0.0,
            rng,
        }
    }

    pub fn apply_dropout(&mut self, tape: &Tape, x: Tensor2) -> Tensor2 {
        if self.training && self.dropout > 0.0 {
            tape.dropout(x, self.dropout, self.rng)
        } else {
            x
        }
    }
}

/// Symmetric normalization with self-loops: `D^{-1/2} (A + I) D^{-1/2}`.
pub fn sym_norm_adjacency(a: &Matrix) -> Matrix {
    assert_eq!(a.rows(), a.cols(), "adjacency must be square");
    let n = a.rows();
    let mut with_loops = a.clone();
    for i in 0..n {
        with_loops.set(i, i, with_loops.get(i, i) + 1.0);
    }
    let inv_sqrt: Vec<f64> = (0..n)
        .map(|i| {
            let d: f64 = with_loops.row(i).iter().sum();
            1.0 / d.sqrt()
        })
        .collect();
    Matrix::from_fn(n, n, |i, j| with_loops.get(i, j) * inv_sqrt[i] * inv_sqrt[j])
}

/// One graph convolution: `relu(norm(A) * H * W)`.
pub fn gcn_layer(tape: &Tape, adjacency: &Matrix, h: Tensor2, w: Tensor2) -> Tensor2 {
    assert_eq!(
        adjacency.cols(),
        h.rows(),
        "gcn_layer shape mismatch: adjacency {}x{}, hidden {}x{}",
        adjacency.rows(),
        adjacency.cols(),
        h.rows(),
        h.cols()
    );
    let a_hat = tape.constant(sym_norm_adjacency(adjacency));
    tape.relu(tape.matmul(tape.matmul(a_hat, h), w))
}

/// Adjacency + hidden features at one pooling level.
pub struct PooledState {
    pub adjacency: Matrix,
    pub hidden: Tensor2,
    pub level: usize,
}

/// Pool one level up: `A' = S^T A S`, `P = S^T H`.
pub fn pool(tape: &Tape, state: &PooledState, s: &Matrix) -> PooledState {
    assert_eq!(
        s.rows(),
        state.adjacency.rows(),
        "pool shape mismatch: assignment {}x{}, state dimension {}",
        s.rows(),
        s.cols(),
        state.adjacency.rows()
    );
    let st = s.transpose();
    let adjacency = st.matmul(&state.adjacency).matmul(s);
    let hidden = tape.matmul(tape.constant(st), state.hidden);
    PooledState {
        adjacency,
        hidden,
        level: state.level + 1,
    }
}

/// Unpool one level down: `A' = S A S^T`, `P = S H` (cluster features are
/// broadcast back to their members).
pub fn unpool(tape: &Tape, state: &PooledState, s: &Matrix) -> PooledState {
    assert_eq!(
        s.cols(),
        state.adjacency.rows(),
        "unpool shape mismatch: assignment {}x{}, state dimension {}",
        s.rows(),
        s.cols(),
        state.adjacency.rows()
    );
    let adjacency = s.matmul(&state.adjacency).matmul(&s.transpose());
    let hidden = tape.matmul(tape.constant(s.clone()), state.hidden);
    PooledState {
        adjacency,
        hidden,
        level: state.level + 1,
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Readout {
    #[default]
    Mean,
    Sum,
}

/// Whole-graph encoder: one GCN + pool per tree level going up, then one
/// GCN + unpool per level coming back down with the same assignments.
#[derive(Clone, Debug)]
pub struct HierarchicalEncoder {
    pub levels: usize,
    pub in_dim: usize,
    pub hidden: usize,
}

impl HierarchicalEncoder {
    pub fn init_params(&self, store: &mut ParamStore, rng: &mut ChaCha8Rng) {
        for t in 0..self.levels {
            let fan_in = if t == 0 { self.in_dim } else { self.hidden };
            store.register(
                &format!("graph.up{t}.w"),
                fan_in,
                self.hidden,
                Init::UniformFanIn,
                rng,
            );
        }
        for t in 0..self.levels {
            store.register(
                &format!("graph.down{t}.w"),
                self.hidden,
                self.hidden,
                Init::UniformFanIn,
                rng,
            );
        }
    }

    /// Per-node hidden rows (`n x hidden`) for the whole graph.
    pub fn forward(
        &self,
        tape: &Tape,
        store: &ParamStore,
        adjacency: &Matrix,
        features: &Matrix,
        stack: &AssignmentStack,
        ctx: &mut ForwardCtx,
    ) -> Tensor2 {
        assert_eq!(stack.height(), self.levels, "stack height mismatch");
        assert_eq!(
            features.rows(),
            adjacency.rows(),
            "feature/adjacency mismatch"
        );
        let mut state = PooledState {
            adjacency: adjacency.clone(),
            hidden: tape.constant(features.clone()),
            level: 0,
        };
        let mut adjacencies = Vec::with_capacity(self.levels + 1);
        for (t, s) in stack.levels.iter().enumerate() {
            let w = tape.param(store, &format!("graph.up{t}.w"));
            let g = gcn_layer(tape, &state.adjacency, state.hidden, w);
            let g = ctx.apply_dropout(tape, g);
            adjacencies.push(state.adjacency.clone());
            state.hidden = g;
            state = pool(tape, &state, s);
        }
        adjacencies.push(state.adjacency.clone());
        for (t, s) in stack.levels.iter().enumerate().rev() {
            let w = tape.param(store, &format!("graph.down{t}.w"));
            let g = gcn_layer(tape, &adjacencies[t + 1], state.hidden, w);
            let g = ctx.apply_dropout(tape, g);
            state.adjacency = adjacencies[t + 1].clone();
            state.hidden = g;
            state = unpool(tape, &state, s);
            state.adjacency = adjacencies[t].clone();
        }
        state.hidden
    }
}

/// Ego-subgraph encoder: GCN + pool per level with a per-level readout;
/// the readouts concatenate into a `1 x (levels * hidden)` row.
#[derive(Clone, Debug)]
pub struct SubgraphEncoder {
    pub levels: usize,
    pub in_dim: usize,
    pub hidden: usize,
    pub readout: Readout,
}

impl SubgraphEncoder {
    pub fn init_params(&self, store: &mut ParamStore, rng: &mut ChaCha8Rng) {
        for t in 0..self.levels {
            let fan_in = if t == 0 { self.in_dim } else { self.hidden };
            store.register(
                &format!("sub.l{t}.w"),
                fan_in,
                self.hidden,
                Init::UniformFanIn,
                rng,
            );
        }
    }

    pub fn out_dim(&self) -> usize {
        self.levels * self.hidden
    }

    pub fn forward(
        &self,
        tape: &Tape,
        store: &ParamStore,
        adjacency: &Matrix,
        features: &Matrix,
        stack: &AssignmentStack,
        ctx: &mut ForwardCtx,
    ) -> Tensor2 {
        assert!(adjacency.rows() > 0, "rejected: empty subgraph");
        assert_eq!(stack.height(), self.levels, "stack height mismatch");
        let mut state = PooledState {
            adjacency: adjacency.clone(),
            hidden: tape.constant(features.clone()),
            level: 0,
        };
        let mut readouts = Vec::with_capacity(self.levels);
        for (t, s) in stack.levels.iter().enumerate() {
            let w = tape.param(store, &format!("sub.l{t}.w"));
            let g = gcn_layer(tape, &state.adjacency, state.hidden, w);
            let g = ctx.apply_dropout(tape, g);
            state.hidden = g;
            state = pool(tape, &state, s);
            readouts.push(match self.readout {
                Readout::Mean => tape.col_means(state.hidden),
                Readout::Sum => tape.col_sums(state.hidden),
            });
        }
        tape.concat_cols(&readouts)
    }
}
