//! Loss functions and projection heads.
//!
//! The contrastive objective treats the same node's embeddings in two views
//! as the positive pair; negatives are every other node in the same view
//! and in the other view. The positive pair is included in the denominator
//! (the conventional bounded form), so the loss is always nonnegative.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Init, ParamStore, Tape, Tensor2};
use crate::matrix::Matrix;
use crate::pooling::ForwardCtx;

/// Two affine maps with a relu between: `in_dim -> hidden -> hidden`.
/// Node-level and subgraph-level heads carry independent parameters.
#[derive(Clone, Debug)]
pub struct ProjectionHead {
    pub name: String,
    pub in_dim: usize,
    pub hidden: usize,
}

impl ProjectionHead {
    pub fn new(name: &str, in_dim: usize, hidden: usize) -> Self {
        ProjectionHead {
            name: name.to_string(),
            in_dim,
            hidden,
        }
    }

    pub fn init_params(&self, store: &mut ParamStore, rng: &mut ChaCha8Rng) {
        let n = &self.name;
        store.register(&format!("{n}.w1"), self.in_dim, self.hidden, Init::UniformFanIn, rng);
        store.register(&format!("{n}.b1"), 1, self.hidden, Init::Zeros, rng);
        store.register(&format!("{n}.w2"), self.hidden, self.hidden, Init::UniformFanIn, rng);
        store.register(&format!("{n}.b2"), 1, self.hidden, Init::Zeros, rng);
    }

    pub fn forward(
        &self,
        tape: &Tape,
        store: &ParamStore,
        x: Tensor2,
        ctx: &mut ForwardCtx,
    ) -> Tensor2 {
        let n = &self.name;
        let z = tape.add_row_vec(
            tape.matmul(x, tape.param(store, &format!("{n}.w1"))),
            tape.param(store, &format!("{n}.b1")),
        );
        let z = ctx.apply_dropout(tape, tape.relu(z));
        tape.add_row_vec(
            tape.matmul(z, tape.param(store, &format!("{n}.w2"))),
            tape.param(store, &format!("{n}.b2")),
        )
    }
}

/// Symmetric InfoNCE over two row-aligned embedding matrices. Rows are
/// L2-normalized before cosine similarities; the per-anchor denominator is
/// the positive pair plus intra-view and cross-view negatives. Returns the
/// sum over anchors of both directions (natural log).
pub fn info_nce(tape: &Tape, z_a: Tensor2, z_b: Tensor2, tau: f64) -> Tensor2 {
    assert_eq!(
        z_a.shape(),
        z_b.shape(),
        "info_nce shape mismatch: {}x{} vs {}x{}",
        z_a.rows(),
        z_a.cols(),
        z_b.rows(),
        z_b.cols()
    );
    assert!(z_a.rows() >= 2, "rejected: info_nce needs >= 2 rows for negatives");
    assert!(tau > 0.0, "rejected: temperature {tau} must be positive");
    let n = z_a.rows();
    let inv_tau = 1.0 / tau;
    let na = tape.row_l2_normalize(z_a);
    let nb = tape.row_l2_normalize(z_b);

    let eye = tape.constant(Matrix::eye(n));
    let off = tape.constant(Matrix::from_fn(n, n, |i, j| if i == j { 0.0 } else { 1.0 }));

    let direction = |anchor: Tensor2, other: Tensor2| -> Tensor2 {
        let cross = tape.exp(tape.scale(tape.matmul(anchor, tape.transpose(other)), inv_tau));
        let intra = tape.exp(tape.scale(tape.matmul(anchor, tape.transpose(anchor)), inv_tau));
        let pos = tape.row_sums(tape.hadamard(cross, eye));
        let denom = tape.add(
            tape.row_sums(tape.hadamard(intra, off)),
            tape.row_sums(cross),
        );
        tape.sum_all(tape.sub(tape.ln(denom), tape.ln(pos)))
    };
    tape.add(direction(na, nb), direction(nb, na))
}

/// Two-affine-layer classification head ending in two logits.
#[derive(Clone, Debug)]
pub struct ClassifierHead {
    pub in_dim: usize,
    pub hidden: usize,
}

impl ClassifierHead {
    pub fn init_params(&self, store: &mut ParamStore, rng: &mut ChaCha8Rng) {
        store.register("cls.w1", self.in_dim, self.hidden, Init::UniformFanIn, rng);
        store.register("cls.b1", 1, self.hidden, Init::Zeros, rng);
        store.register("cls.w2", self.hidden, 2, Init::UniformFanIn, rng);
        store.register("cls.b2", 1, 2, Init::Zeros, rng);
    }

    pub fn logits(
        &self,
        tape: &Tape,
        store: &ParamStore,
        h: Tensor2,
        ctx: &mut ForwardCtx,
    ) -> Tensor2 {
        let z = tape.add_row_vec(tape.matmul(h, tape.param(store, "cls.w1")), tape.param(store, "cls.b1"));
        let z = ctx.apply_dropout(tape, tape.relu(z));
        tape.add_row_vec(tape.matmul(z, tape.param(store, "cls.w2")), tape.param(store, "cls.b2"))
    }
}

/// Mean-reduced negative log likelihood over the given rows plus the
/// class probabilities (human, bot) per row.
pub fn classification_loss(
    tape: &Tape,
    store: &ParamStore,
    head: &ClassifierHead,
    h_rows: Tensor2,
    labels: &[u8],
    ctx: &mut ForwardCtx,
) -> (Tensor2, Matrix) {
    assert!(!labels.is_empty(), "rejected: empty training split");
    assert_eq!(
        h_rows.rows(),
        labels.len(),
        "classification rows/labels mismatch: {} vs {}",
        h_rows.rows(),
        labels.len()
    );
    let logits = head.logits(tape, store, h_rows, ctx);
    let log_probs = tape.row_log_softmax(logits);
    let one_hot = Matrix::from_fn(labels.len(), 2, |i, j| {
        if labels[i] as usize == j {
            1.0
        } else {
            0.0
        }
    });
    let picked = tape.hadamard(log_probs, tape.constant(one_hot));
    let loss = tape.scale(tape.sum_all(picked), -1.0 / labels.len() as f64);

    let logits_value = tape.value(logits);
    let mut probs = Matrix::zeros(labels.len(), 2);
    for i in 0..labels.len() {
        let (a, b) = (logits_value.get(i, 0), logits_value.get(i, 1));
        let m = a.max(b);
        let (ea, eb) = ((a - m).exp(), (b - m).exp());
        probs.set(i, 0, ea / (ea + eb));
        probs.set(i, 1, eb / (ea + eb));
    }
    (loss, probs)
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
    pub tau: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda1: 0.09,
            lambda2: 0.03,
            tau: 0.1,
        }
    }
}

/// Projection heads for the two contrastive tasks. The node-level head is
/// shared by both of its inputs (equal widths); the subgraph-level task is
/// a two-tower pair, because the concatenated subgraph embedding is
/// `levels * hidden` wide while the relational embedding is `hidden` wide.
#[derive(Clone, Debug)]
pub struct ContrastiveHeads {
    pub node: ProjectionHead,
    pub sub_side: ProjectionHead,
    pub rel_side: ProjectionHead,
}

impl ContrastiveHeads {
    pub fn new(hidden: usize, sub_width: usize) -> Self {
        ContrastiveHeads {
            node: ProjectionHead::new("psi_n", hidden, hidden),
            sub_side: ProjectionHead::new("psi_s.sub", sub_width, hidden),
            rel_side: ProjectionHead::new("psi_s.rel", hidden, hidden),
        }
    }

    pub fn init_params(&self, store: &mut ParamStore, rng: &mut ChaCha8Rng) {
        self.node.init_params(store, rng);
        self.sub_side.init_params(store, rng);
        self.rel_side.init_params(store, rng);
    }
}

/// Assembled multi-task loss and its per-term values for tracing.
pub struct TotalLoss {
    pub total: Tensor2,
    pub ce: f64,
    pub node_contrast: Option<f64>,
    pub subgraph_contrast: Option<f64>,
}

/// `total = ce + lambda1 * nce(psi_n(H_graph), psi_n(H_rel))
///             + lambda2 * nce(psi_s(H_sub), psi_s(H_rel))`.
///
/// The embedding matrices are already restricted to the contrastive batch
/// and row-aligned by node id; `None` views (ablations) drop their term.
#[allow(clippy::too_many_arguments)]
pub fn total_loss(
    tape: &Tape,
    store: &ParamStore,
    ce: Tensor2,
    h_graph: Option<Tensor2>,
    h_sub: Option<Tensor2>,
    h_rel: Tensor2,
    heads: &ContrastiveHeads,
    weights: &LossWeights,
    ctx: &mut ForwardCtx,
) -> TotalLoss {
    let mut total = ce;
    let mut node_contrast = None;
    let mut subgraph_contrast = None;
    if let Some(hg) = h_graph {
        if weights.lambda1 != 0.0 {
            let za = heads.node.forward(tape, store, hg, ctx);
            let zb = heads.node.forward(tape, store, h_rel, ctx);
            let nce = info_nce(tape, za, zb, weights.tau);
            node_contrast = Some(tape.scalar(nce));
            total = tape.add(total, tape.scale(nce, weights.lambda1));
        }
    }
    if let Some(hs) = h_sub {
        if weights.lambda2 != 0.0 {
            let za = heads.sub_side.forward(tape, store, hs, ctx);
            let zb = heads.rel_side.forward(tape, store, h_rel, ctx);
            let sce = info_nce(tape, za, zb, weights.tau);
            subgraph_contrast = Some(tape.scalar(sce));
            total = tape.add(total, tape.scale(sce, weights.lambda2));
        }
    }
    TotalLoss {
        total,
        ce: tape.scalar(ce),
        node_contrast,
        subgraph_contrast,
    }
}
