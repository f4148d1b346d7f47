//! Relational encoder that passes messages beyond the homophily assumption.
//!
//! Per relation and layer, every directed edge gets a signed weight in
//! (-1, 1): a learned attention logit over the concatenated endpoint
//! features, perturbed with logistic (Gumbel-difference) noise during
//! training and sharpened by a small temperature before a tanh. Weights
//! near +1 keep neighbors similar, weights near -1 retain the difference
//! signal. Per-relation mean aggregation follows, and a channel-wise
//! softmax across relations mixes the per-relation embeddings with a
//! transformed self term.
//!
//! With all edge weights forced to 1 and uniform mixing this reduces
//! exactly to a relational GCN with a root self-loop.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Init, ParamStore, Tape, Tensor2};
use crate::graph::MultiRelGraph;
use crate::matrix::Matrix;
use crate::pooling::ForwardCtx;

/// Signed edge weight for one edge: `tanh((logit + log e - log(1-e)) / tau)`.
/// `h_target` is the aggregating node's hidden row, `h_source` the
/// neighbor's; `att` is the length-`2d` attention vector. In evaluation
/// mode pass `eps = 0.5`, which zeroes the noise term exactly.
pub fn edge_weight(h_target: &[f64], h_source: &[f64], att: &[f64], tau: f64, eps: f64) -> f64 {
    assert!(tau > 0.0, "rejected: gumbel temperature {tau} must be positive");
    assert!(
        eps > 0.0 && eps < 1.0,
        "rejected: uniform draw {eps} outside (0, 1)"
    );
    assert_eq!(att.len(), h_target.len() + h_source.len());
    let logit: f64 = h_target
        .iter()
        .chain(h_source)
        .zip(att)
        .map(|(h, a)| h * a)
        .sum();
    // tanh rounds to exactly +-1.0 in f64 once the argument saturates; the
    // (1 - eps) scale keeps weights strictly inside the open interval.
    ((logit + eps.ln() - (1.0 - eps).ln()) / tau).tanh() * OMEGA_SCALE
}

/// Largest scale keeping `tanh` output strictly below 1 in magnitude.
const OMEGA_SCALE: f64 = 1.0 - f64::EPSILON;

/// Per-relation `(src, dst, omega)` triples from the last encoder layer in
/// evaluation mode; every `|omega| < 1`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EdgeWeightReport {
    pub relations: Vec<Vec<(usize, usize, f64)>>,
}

#[derive(Clone, Debug)]
pub struct RelationalEncoder {
    pub layers: usize,
    pub relations: usize,
    pub in_dim: usize,
    pub hidden: usize,
    pub gumbel_tau: f64,
    /// Force every edge weight to +1 (relational-GCN reduction).
    pub force_unit_weights: bool,
    /// Skip the learned channel mix and sum relations directly (u = 1).
    pub uniform_mix: bool,
}

impl RelationalEncoder {
    pub fn init_params(&self, store: &mut ParamStore, rng: &mut ChaCha8Rng) {
        assert!(self.layers >= 1, "relational encoder needs >= 1 layer");
        store.register("rel.proj.w", self.in_dim, self.hidden, Init::UniformFanIn, rng);
        for l in 0..self.layers {
            for r in 0..self.relations {
                store.register(
                    &format!("rel.l{l}.r{r}.att"),
                    2 * self.hidden,
                    1,
                    Init::UniformFanIn,
                    rng,
                );
                store.register(
                    &format!("rel.l{l}.r{r}.w"),
                    self.hidden,
                    self.hidden,
                    Init::UniformFanIn,
                    rng,
                );
                store.register(
                    &format!("rel.l{l}.r{r}.mix"),
                    self.relations * self.hidden,
                    self.hidden,
                    Init::UniformFanIn,
                    rng,
                );
            }
            store.register(
                &format!("rel.l{l}.root.w"),
                self.hidden,
                self.hidden,
                Init::UniformFanIn,
                rng,
            );
        }
    }

    /// Per-node hidden rows (`n x hidden`).
    pub fn forward(
        &self,
        tape: &Tape,
        store: &ParamStore,
        graph: &MultiRelGraph,
        features: &Matrix,
        ctx: &mut ForwardCtx,
    ) -> Tensor2 {
        self.run(tape, store, graph, features, ctx, None)
    }

    /// Forward pass that also reports the final layer's edge weights.
    pub fn forward_with_weights(
        &self,
        tape: &Tape,
        store: &ParamStore,
        graph: &MultiRelGraph,
        features: &Matrix,
        ctx: &mut ForwardCtx,
    ) -> (Tensor2, EdgeWeightReport) {
        let mut report = EdgeWeightReport {
            relations: Vec::new(),
        };
        let out = self.run(tape, store, graph, features, ctx, Some(&mut report));
        (out, report)
    }

    fn run(
        &self,
        tape: &Tape,
        store: &ParamStore,
        graph: &MultiRelGraph,
        features: &Matrix,
        ctx: &mut ForwardCtx,
        mut report: Option<&mut EdgeWeightReport>,
    ) -> Tensor2 {
        assert_eq!(
            graph.num_relations(),
            self.relations,
            "graph has {} relations, encoder configured for {}",
            graph.num_relations(),
            self.relations
        );
        let n = graph.num_nodes;
        let mut h = tape.matmul(
            tape.constant(features.clone()),
            tape.param(store, "rel.proj.w"),
        );
        for l in 0..self.layers {
            let mut rel_embeds = Vec::with_capacity(self.relations);
            for r in 0..self.relations {
                let edges = &graph.relations[r];
                if edges.is_empty() {
                    rel_embeds.push(tape.constant(Matrix::zeros(n, self.hidden)));
                    if let Some(rep) = report.as_deref_mut() {
                        if l == self.layers - 1 {
                            rep.relations.push(Vec::new());
                        }
                    }
                    continue;
                }
                let src: Vec<usize> = edges.iter().map(|&(s, _)| s).collect();
                let dst: Vec<usize> = edges.iter().map(|&(_, d)| d).collect();

                let omega = if self.force_unit_weights {
                    tape.constant(Matrix::filled(edges.len(), 1, 1.0))
                } else {
                    let att = tape.param(store, &format!("rel.l{l}.r{r}.att"));
                    let target_rows = tape.gather_rows(h, &dst);
                    let source_rows = tape.gather_rows(h, &src);
                    let pair = tape.concat_cols(&[target_rows, source_rows]);
                    let mut logits = tape.matmul(pair, att);
                    if ctx.training {
                        let noise: Vec<f64> = (0..edges.len())
                            .map(|_| {
                                let eps: f64 = ctx.rng.random::<f64>().clamp(1e-12, 1.0 - 1e-12);
                                eps.ln() - (1.0 - eps).ln()
                            })
                            .collect();
                        let noise = tape.constant(Matrix::from_vec(edges.len(), 1, noise));
                        logits = tape.add(logits, noise);
                    }
                    tape.scale(tape.tanh(tape.scale(logits, 1.0 / self.gumbel_tau)), OMEGA_SCALE)
                };
                if let Some(rep) = report.as_deref_mut() {
                    if l == self.layers - 1 {
                        let w = tape.value(omega);
                        let triples = edges
                            .iter()
                            .enumerate()
                            .map(|(e, &(s, d))| (s, d, w.get(e, 0)))
                            .collect();
                        rep.relations.push(triples);
                    }
                }

                let w_r = tape.param(store, &format!("rel.l{l}.r{r}.w"));
                let transformed = tape.matmul(h, w_r);
                let messages = tape.gather_rows(transformed, &src);
                let weighted = tape.scale_rows(messages, omega);
                let summed = tape.scatter_add_rows(weighted, &dst, n);

                // Mean over in-neighbors; nodes without relation-r
                // in-edges keep a zero row.
                let mut indeg = vec![0.0f64; n];
                for &d in &dst {
                    indeg[d] += 1.0;
                }
                let inv: Vec<f64> = indeg
                    .iter()
                    .map(|&d| if d > 0.0 { 1.0 / d } else { 0.0 })
                    .collect();
                let inv = tape.constant(Matrix::from_vec(n, 1, inv));
                rel_embeds.push(tape.scale_rows(summed, inv));
            }

            let mixed = if self.uniform_mix {
                let mut acc = rel_embeds[0];
                for &e in &rel_embeds[1..] {
                    acc = tape.add(acc, e);
                }
                acc
            } else {
                self.channel_mix(tape, store, l, &rel_embeds)
            };

            let root = tape.param(store, &format!("rel.l{l}.root.w"));
            let mut next = tape.add(tape.matmul(h, root), mixed);
            if l + 1 < self.layers {
                next = ctx.apply_dropout(tape, next);
            }
            h = next;
        }
        h
    }

    /// Channel-wise softmax mixing across relations: per node and feature
    /// channel, the R mixing logits softmax to weights that sum to one.
    /// The stabilizing shift is the forward-value max, which leaves both
    /// the value and the gradient of a softmax unchanged.
    fn channel_mix(
        &self,
        tape: &Tape,
        store: &ParamStore,
        layer: usize,
        rel_embeds: &[Tensor2],
    ) -> Tensor2 {
        let concat = tape.concat_cols(rel_embeds);
        let logits: Vec<Tensor2> = (0..self.relations)
            .map(|r| {
                let mix = tape.param(store, &format!("rel.l{layer}.r{r}.mix"));
                tape.matmul(concat, mix)
            })
            .collect();
        let (rows, cols) = (logits[0].rows(), logits[0].cols());
        let mut shift = tape.value(logits[0]);
        for l in &logits[1..] {
            let v = tape.value(*l);
            for (m, x) in shift.data_mut().iter_mut().zip(v.data()) {
                *m = m.max(*x);
            }
        }
        let shift = tape.constant(shift);
        let exps: Vec<Tensor2> = logits
            .iter()
            .map(|&l| tape.exp(tape.sub(l, shift)))
            .collect();
        let mut denom = exps[0];
        for &e in &exps[1..] {
            denom = tape.add(denom, e);
        }
        let mut out = tape.constant(Matrix::zeros(rows, cols));
        for (r, &e) in exps.iter().enumerate() {
            let u = tape.div(e, denom);
            out = tape.add(out, tape.hadamard(rel_embeds[r], u));
        }
        out
    }
}
