//! Plain two-layer GCN baseline on the collapsed undirected view, trained
//! with the same optimizer, schedule and selection protocol as the full
//! model. Used by the synthetic comparison experiment.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{AdamWConfig, Init, ParamStore, Tape};
use crate::dataio::Dataset;
use crate::graph::collapse_to_undirected;
use crate::matrix::Matrix;
use crate::pipeline::{
    metrics_from_confusion, subseed, EpochTrace, MetricsReport, Timings, TrainConfig,
};
use crate::pooling::{sym_norm_adjacency, ForwardCtx};
use crate::{Result, SebotError};

/// `softmax(A_hat * relu(A_hat * X * W1) * W2)` with dropout on the hidden
/// layer; cross-entropy on the training split, validation-best selection.
pub fn train_gcn_baseline(dataset: &Dataset, cfg: &TrainConfig) -> Result<MetricsReport> {
    let graph = &dataset.graph;
    let labels = graph
        .labels
        .as_ref()
        .ok_or_else(|| SebotError::InvalidArgument("baseline needs labels".into()))?;
    if graph.splits.train.is_empty() || graph.splits.val.is_empty() || graph.splits.test.is_empty()
    {
        return Err(SebotError::InvalidArgument("baseline needs full splits".into()));
    }

    let start = Instant::now();
    let a_hat = sym_norm_adjacency(&collapse_to_undirected(graph).dense_adjacency());
    let (n, d) = (graph.num_nodes, graph.features.cols());

    let mut store = ParamStore::new();
    let mut init_rng = ChaCha8Rng::seed_from_u64(subseed(cfg.seed, "gcn-init"));
    store.register("gcn.w1", d, cfg.hidden, Init::UniformFanIn, &mut init_rng);
    store.register("gcn.w2", cfg.hidden, 2, Init::UniformFanIn, &mut init_rng);

    let optim = AdamWConfig {
        lr: cfg.lr,
        weight_decay: cfg.weight_decay,
        ..AdamWConfig::default()
    };
    let train_ids = &graph.splits.train;
    let one_hot = Matrix::from_fn(train_ids.len(), 2, |i, j| {
        if labels[train_ids[i]] as usize == j {
            1.0
        } else {
            0.0
        }
    });

    let logits_of = |store: &ParamStore, training: bool, rng: &mut ChaCha8Rng| -> (Tape, crate::autodiff::Tensor2) {
        let tape = Tape::new();
        let mut ctx = ForwardCtx {
            training,
            dropout: cfg.dropout,
            rng,
        };
        let x = tape.constant(graph.features.clone());
        let ah = tape.constant(a_hat.clone());
        let h = tape.relu(tape.matmul(tape.matmul(ah, x), tape.param(store, "gcn.w1")));
        let h = ctx.apply_dropout(&tape, h);
        let logits = tape.matmul(tape.matmul(ah, h), tape.param(store, "gcn.w2"));
        (tape, logits)
    };

    let predictions = |store: &ParamStore| -> Vec<bool> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (tape, logits) = logits_of(store, false, &mut rng);
        let v = tape.value(logits);
        (0..n).map(|i| v.get(i, 1) > v.get(i, 0)).collect()
    };
    let split_accuracy = |preds: &[bool], ids: &[usize]| -> f64 {
        let hits = ids.iter().filter(|&&i| preds[i] == (labels[i] == 1)).count();
        hits as f64 / ids.len() as f64
    };

    let mut loop_rng = ChaCha8Rng::seed_from_u64(subseed(cfg.seed, "gcn-train"));
    let mut best = (f64::NEG_INFINITY, 0usize, store.snapshot());
    let mut trace = Vec::with_capacity(cfg.max_epochs);
    for epoch in 0..cfg.max_epochs {
        let (tape, logits) = logits_of(&store, true, &mut loop_rng);
        let train_logits = tape.gather_rows(logits, train_ids);
        let log_probs = tape.row_log_softmax(train_logits);
        let picked = tape.hadamard(log_probs, tape.constant(one_hot.clone()));
        let loss = tape.scale(tape.sum_all(picked), -1.0 / train_ids.len() as f64);
        let loss_value = tape.scalar(loss);
        if !loss_value.is_finite() {
            return Err(SebotError::Diverged(format!(
                "gcn baseline epoch {epoch}: loss {loss_value}"
            )));
        }
        tape.backward(loss);
        tape.collect_grads(&mut store);
        store.adamw_step(&optim);

        let preds = predictions(&store);
        let val_accuracy = split_accuracy(&preds, &graph.splits.val);
        if val_accuracy > best.0 {
            best = (val_accuracy, epoch, store.snapshot());
        }
        trace.push(EpochTrace {
            epoch,
            total: loss_value,
            ce: loss_value,
            node_contrast: None,
            subgraph_contrast: None,
            val_accuracy,
        });
    }
    store.restore(&best.2);

    let preds = predictions(&store);
    let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
    for &i in &graph.splits.test {
        match (labels[i] == 1, preds[i]) {
            (true, true) => tp += 1,
            (false, true) => fp += 1,
            (true, false) => fn_ += 1,
            (false, false) => tn += 1,
        }
    }
    let (accuracy, f1, recall, precision) = metrics_from_confusion(tp, fp, fn_, tn);
    Ok(MetricsReport {
        accuracy,
        f1,
        recall,
        precision,
        best_epoch: best.1,
        loss_trace: trace,
        timings: Timings {
            view_prep_secs: 0.0,
            train_secs: start.elapsed().as_secs_f64(),
        },
    })
}
