//! Full model assembly: the three view encoders, the projection heads and
//! the classifier, wired by one config.

use rand_chacha::ChaCha8Rng;

use crate::autodiff::{ParamStore, Tape, Tensor2};
use crate::matrix::Matrix;
use crate::objectives::{ClassifierHead, ContrastiveHeads};
use crate::pipeline::{TrainConfig, Views};
use crate::pooling::{ForwardCtx, HierarchicalEncoder, SubgraphEncoder};
use crate::relenc::{EdgeWeightReport, RelationalEncoder};

pub struct ViewEmbeddings {
    pub graph: Option<Tensor2>,
    pub subgraph: Option<Tensor2>,
    pub relational: Tensor2,
    /// Row-aligned concatenation of the active views (`n x concat_width`).
    pub concat: Tensor2,
}

#[derive(Clone, Debug)]
pub struct Model {
    pub hierarchical: Option<HierarchicalEncoder>,
    pub subgraph: Option<SubgraphEncoder>,
    pub relational: RelationalEncoder,
    pub heads: ContrastiveHeads,
    pub classifier: ClassifierHead,
}

impl Model {
    pub fn build(cfg: &TrainConfig, in_dim: usize, relations: usize) -> Model {
        let k = cfg.tree_height;
        let hidden = cfg.hidden;
        let hierarchical = (!cfg.ablation.no_graph_tree).then_some(HierarchicalEncoder {
            levels: k,
            in_dim,
            hidden,
        });
        let subgraph = (!cfg.ablation.no_subgraph_trees).then_some(SubgraphEncoder {
            levels: k,
            in_dim,
            hidden,
            readout: cfg.readout,
        });
        let relational = RelationalEncoder {
            layers: cfg.layers,
            relations,
            in_dim,
            hidden,
            gumbel_tau: cfg.gumbel_tau,
            force_unit_weights: cfg.ablation.rgcn_encoder,
            uniform_mix: cfg.ablation.rgcn_encoder || cfg.ablation.no_channel_mix,
        };
        let mut width = hidden;
        if hierarchical.is_some() {
            width += hidden;
        }
        let sub_width = k * hidden;
        if subgraph.is_some() {
            width += sub_width;
        }
        Model {
            hierarchical,
            subgraph,
            relational,
            heads: ContrastiveHeads::new(hidden, sub_width),
            classifier: ClassifierHead {
                in_dim: width,
                hidden,
            },
        }
    }

    /// Width of the concatenated per-node embedding: the relational view is
    /// always present (`hidden`), the whole-graph view adds `hidden`, the
    /// subgraph view adds `tree_height * hidden`.
    pub fn concat_width(&self) -> usize {
        self.classifier.in_dim
    }

    pub fn init_params(&self, store: &mut ParamStore, rng: &mut ChaCha8Rng) {
        if let Some(enc) = &self.hierarchical {
            enc.init_params(store, rng);
        }
        if let Some(enc) = &self.subgraph {
            enc.init_params(store, rng);
        }
        self.relational.init_params(store, rng);
        self.heads.init_params(store, rng);
        self.classifier.init_params(store, rng);
    }

    /// Encode every active view and concatenate rows by node id.
    pub fn forward_all(
        &self,
        tape: &Tape,
        store: &ParamStore,
        views: &Views,
        features: &Matrix,
        ctx: &mut ForwardCtx,
    ) -> ViewEmbeddings {
        let graph = self.hierarchical.as_ref().map(|enc| {
            enc.forward(
                tape,
                store,
                &views.collapsed.dense_adjacency(),
                features,
                &views.graph_stack,
                ctx,
            )
        });
        let subgraph = self.subgraph.as_ref().map(|enc| {
            let rows: Vec<Tensor2> = views
                .subviews
                .iter()
                .map(|sv| {
                    let sub_features = gather_matrix_rows(features, &sv.sub.to_global);
                    enc.forward(
                        tape,
                        store,
                        &sv.sub.graph.dense_adjacency(),
                        &sub_features,
                        &sv.stack,
                        ctx,
                    )
                })
                .collect();
            tape.concat_rows(&rows)
        });
        let relational = self
            .relational
            .forward(tape, store, &views.rel_graph, &views.rel_features, ctx);

        let mut parts = Vec::new();
        if let Some(g) = graph {
            parts.push(g);
        }
        if let Some(s) = subgraph {
            parts.push(s);
        }
        parts.push(relational);
        let concat = if parts.len() == 1 {
            parts[0]
        } else {
            tape.concat_cols(&parts)
        };
        ViewEmbeddings {
            graph,
            subgraph,
            relational,
            concat,
        }
    }

    /// Final-layer signed edge weights per relation, evaluation mode.
    pub fn edge_weight_report(
        &self,
        store: &ParamStore,
        views: &Views,
        rng: &mut ChaCha8Rng,
    ) -> EdgeWeightReport {
        let tape = Tape::new();
        let mut ctx = ForwardCtx::eval(rng);
        let (_, report) = self.relational.forward_with_weights(
            &tape,
            store,
            &views.rel_graph,
            &views.rel_features,
            &mut ctx,
        );
        report
    }
}

pub(crate) fn gather_matrix_rows(m: &Matrix, rows: &[usize]) -> Matrix {
    let mut out = Matrix::zeros(rows.len(), m.cols());
    for (i, &r) in rows.iter().enumerate() {
        out.row_mut(i).copy_from_slice(m.row(r));
    }
    out
}
