//! Training loop, evaluation and the ablation harness.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{AdamWConfig, ParamStore, Tape};
use crate::dataio::Dataset;
use crate::objectives::{classification_loss, total_loss, LossWeights};
use crate::pipeline::{
    metrics_from_confusion, prepare_views, subseed, EpochTrace, MetricsReport, Model, Timings,
    TrainConfig, Views,
};
use crate::pooling::ForwardCtx;
use crate::{Result, SebotError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl std::str::FromStr for Split {
    type Err = SebotError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(SebotError::InvalidArgument(format!("unknown split {other:?}"))),
        }
    }
}

pub struct TrainOutcome {
    /// Parameters at the best validation epoch.
    pub store: ParamStore,
    pub report: MetricsReport,
}

fn require_supervision(dataset: &Dataset) -> Result<()> {
    if dataset.graph.labels.is_none() {
        return Err(SebotError::InvalidArgument("training needs labels".into()));
    }
    let s = &dataset.graph.splits;
    if s.train.is_empty() || s.val.is_empty() || s.test.is_empty() {
        return Err(SebotError::InvalidArgument(
            "training needs nonempty train/val/test splits".into(),
        ));
    }
    Ok(())
}

/// Contrastive node batch for one epoch: all nodes when the graph is small
/// enough, otherwise a seeded sample without replacement, sorted by id.
fn contrastive_batch(n: usize, cap: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut ids: Vec<usize> = (0..n).collect();
    if n > cap {
        ids.shuffle(rng);
        ids.truncate(cap);
        ids.sort_unstable();
    }
    ids
}

/// One full supervised + contrastive run. Deterministic for a given
/// `(dataset, config, seed)`; aborts with a diagnostic if the loss leaves
/// the finite range.
pub fn train(dataset: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    require_supervision(dataset)?;
    let graph = &dataset.graph;
    let n = graph.num_nodes;

    let prep_start = Instant::now();
    let views = prepare_views(dataset, cfg)?;
    let view_prep_secs = prep_start.elapsed().as_secs_f64();

    let model = Model::build(cfg, graph.features.cols(), graph.num_relations());
    let mut store = ParamStore::new();
    let mut init_rng = ChaCha8Rng::seed_from_u64(subseed(cfg.seed, "init"));
    model.init_params(&mut store, &mut init_rng);

    let labels = graph.labels.as_ref().unwrap();
    let train_ids = graph.splits.train.clone();
    let train_labels: Vec<u8> = train_ids.iter().map(|&i| labels[i]).collect();
    let weights = LossWeights {
        lambda1: cfg.lambda1,
        lambda2: cfg.lambda2,
        tau: cfg.tau,
    };
    let optim = AdamWConfig {
        lr: cfg.lr,
        weight_decay: cfg.weight_decay,
        ..AdamWConfig::default()
    };

    let train_start = Instant::now();
    let mut loop_rng = ChaCha8Rng::seed_from_u64(subseed(cfg.seed, "train"));
    let mut best_val = f64::NEG_INFINITY;
    let mut best_epoch = 0usize;
    let mut best_params = store.snapshot();
    let mut trace = Vec::with_capacity(cfg.max_epochs);

    for epoch in 0..cfg.max_epochs {
        let batch = contrastive_batch(n, cfg.contrastive_batch, &mut loop_rng);
        let tape = Tape::new();
        let mut ctx = ForwardCtx {
            training: true,
            dropout: cfg.dropout,
            rng: &mut loop_rng,
        };
        let fwd = model.forward_all(&tape, &store, &views, &graph.features, &mut ctx);
        let h_train = tape.gather_rows(fwd.concat, &train_ids);
        let (ce, _) =
            classification_loss(&tape, &store, &model.classifier, h_train, &train_labels, &mut ctx);
        let loss = total_loss(
            &tape,
            &store,
            ce,
            fwd.graph.map(|h| tape.gather_rows(h, &batch)),
            fwd.subgraph.map(|h| tape.gather_rows(h, &batch)),
            tape.gather_rows(fwd.relational, &batch),
            &model.heads,
            &weights,
            &mut ctx,
        );
        let total_value = tape.scalar(loss.total);
        if !total_value.is_finite() {
            return Err(SebotError::Diverged(format!(
                "epoch {epoch}: total loss {total_value} (ce {}, ncl {:?}, scl {:?})",
                loss.ce, loss.node_contrast, loss.subgraph_contrast
            )));
        }
        tape.backward(loss.total);
        tape.collect_grads(&mut store);
        store.adamw_step(&optim);

        let (val_accuracy, _, _, _) = eval_split(&model, &store, &views, dataset, Split::Val)?;
        if val_accuracy > best_val {
            best_val = val_accuracy;
            best_epoch = epoch;
            best_params = store.snapshot();
        }
        trace.push(EpochTrace {
            epoch,
            total: total_value,
            ce: loss.ce,
            node_contrast: loss.node_contrast,
            subgraph_contrast: loss.subgraph_contrast,
            val_accuracy,
        });
    }
    store.restore(&best_params);
    let train_secs = train_start.elapsed().as_secs_f64();

    let (accuracy, f1, recall, precision) = eval_split(&model, &store, &views, dataset, Split::Test)?;
    Ok(TrainOutcome {
        store,
        report: MetricsReport {
            accuracy,
            f1,
            recall,
            precision,
            best_epoch,
            loss_trace: trace,
            timings: Timings {
                view_prep_secs,
                train_secs,
            },
        },
    })
}

/// Deterministic evaluation-mode predictions over all nodes: probability of
/// the bot class per node.
pub(crate) fn predict_bot_probs(
    model: &Model,
    store: &ParamStore,
    views: &Views,
    dataset: &Dataset,
) -> Vec<f64> {
    let tape = Tape::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut ctx = ForwardCtx::eval(&mut rng);
    let fwd = model.forward_all(&tape, store, views, &dataset.graph.features, &mut ctx);
    let logits = model.classifier.logits(&tape, store, fwd.concat, &mut ctx);
    let values = tape.value(logits);
    (0..dataset.graph.num_nodes)
        .map(|i| {
            let (a, b) = (values.get(i, 0), values.get(i, 1));
            let m = a.max(b);
            let (ea, eb) = ((a - m).exp(), (b - m).exp());
            eb / (ea + eb)
        })
        .collect()
}

fn eval_split(
    model: &Model,
    store: &ParamStore,
    views: &Views,
    dataset: &Dataset,
    split: Split,
) -> Result<(f64, f64, f64, f64)> {
    let labels = dataset
        .graph
        .labels
        .as_ref()
        .ok_or_else(|| SebotError::InvalidArgument("evaluation needs labels".into()))?;
    let ids = match split {
        Split::Train => &dataset.graph.splits.train,
        Split::Val => &dataset.graph.splits.val,
        Split::Test => &dataset.graph.splits.test,
    };
    if ids.is_empty() {
        return Err(SebotError::InvalidArgument(format!("empty split {split:?}")));
    }
    let probs = predict_bot_probs(model, store, views, dataset);
    let (mut tp, mut fp, mut fn_, mut tn) = (0usize, 0usize, 0usize, 0usize);
    for &i in ids {
        let predicted_bot = probs[i] > 0.5;
        match (labels[i] == 1, predicted_bot) {
            (true, true) => tp += 1,
            (false, true) => fp += 1,
            (true, false) => fn_ += 1,
            (false, false) => tn += 1,
        }
    }
    Ok(metrics_from_confusion(tp, fp, fn_, tn))
}

/// Evaluate stored parameters on a split. The store must hold exactly the
/// parameters the config's model expects.
pub fn evaluate(
    dataset: &Dataset,
    cfg: &TrainConfig,
    store: &ParamStore,
    split: Split,
) -> Result<MetricsReport> {
    cfg.validate()?;
    let model = Model::build(cfg, dataset.graph.features.cols(), dataset.graph.num_relations());
    validate_store(&model, cfg, store)?;
    let views = prepare_views(dataset, cfg)?;
    let (accuracy, f1, recall, precision) = eval_split(&model, store, &views, dataset, split)?;
    Ok(MetricsReport {
        accuracy,
        f1,
        recall,
        precision,
        best_epoch: 0,
        loss_trace: Vec::new(),
        timings: Timings::default(),
    })
}

/// Evaluation-mode concatenated embeddings for every node (`n x width`),
/// for the embedding export.
pub fn node_embeddings(
    dataset: &Dataset,
    cfg: &TrainConfig,
    store: &ParamStore,
) -> Result<crate::Matrix> {
    cfg.validate()?;
    let model = Model::build(cfg, dataset.graph.features.cols(), dataset.graph.num_relations());
    validate_store(&model, cfg, store)?;
    let views = prepare_views(dataset, cfg)?;
    let tape = Tape::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut ctx = ForwardCtx::eval(&mut rng);
    let fwd = model.forward_all(&tape, store, &views, &dataset.graph.features, &mut ctx);
    Ok(tape.value(fwd.concat))
}

/// Final-layer signed edge weights for every relation, evaluation mode.
pub fn edge_weights(
    dataset: &Dataset,
    cfg: &TrainConfig,
    store: &ParamStore,
) -> Result<crate::relenc::EdgeWeightReport> {
    cfg.validate()?;
    let model = Model::build(cfg, dataset.graph.features.cols(), dataset.graph.num_relations());
    validate_store(&model, cfg, store)?;
    let views = prepare_views(dataset, cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    Ok(model.edge_weight_report(store, &views, &mut rng))
}

fn validate_store(model: &Model, cfg: &TrainConfig, store: &ParamStore) -> Result<()> {
    let mut expected = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    model.init_params(&mut expected, &mut rng);
    for name in expected.names() {
        if !store.contains(name) {
            return Err(SebotError::CheckpointMismatch(format!(
                "missing parameter {name} for config (k={}, hidden={}, L={})",
                cfg.tree_height, cfg.hidden, cfg.layers
            )));
        }
        if store.value(name).shape() != expected.value(name).shape() {
            return Err(SebotError::CheckpointMismatch(format!(
                "parameter {name} has shape {:?}, expected {:?}",
                store.value(name).shape(),
                expected.value(name).shape()
            )));
        }
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationAxis {
    NoGraphTree,
    NoSubgraphTrees,
    NoChannelMix,
    RgcnEncoder,
    FeatureMask,
    FeatureDrop,
    EdgeAdd,
}

impl AblationAxis {
    pub const ALL: [AblationAxis; 7] = [
        AblationAxis::NoGraphTree,
        AblationAxis::NoSubgraphTrees,
        AblationAxis::NoChannelMix,
        AblationAxis::RgcnEncoder,
        AblationAxis::FeatureMask,
        AblationAxis::FeatureDrop,
        AblationAxis::EdgeAdd,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            AblationAxis::NoGraphTree => "no_graph_tree",
            AblationAxis::NoSubgraphTrees => "no_subgraph_trees",
            AblationAxis::NoChannelMix => "no_channel_mix",
            AblationAxis::RgcnEncoder => "rgcn_encoder",
            AblationAxis::FeatureMask => "feature_mask",
            AblationAxis::FeatureDrop => "feature_drop",
            AblationAxis::EdgeAdd => "edge_add",
        }
    }

    pub fn apply(&self, cfg: &TrainConfig) -> TrainConfig {
        let mut out = cfg.clone();
        match self {
            AblationAxis::NoGraphTree => out.ablation.no_graph_tree = true,
            AblationAxis::NoSubgraphTrees => out.ablation.no_subgraph_trees = true,
            AblationAxis::NoChannelMix => out.ablation.no_channel_mix = true,
            AblationAxis::RgcnEncoder => out.ablation.rgcn_encoder = true,
            AblationAxis::FeatureMask => out.ablation.aug_mode = super::AugMode::FeatureMask,
            AblationAxis::FeatureDrop => out.ablation.aug_mode = super::AugMode::FeatureDrop,
            AblationAxis::EdgeAdd => out.ablation.aug_mode = super::AugMode::EdgeAdd,
        }
        out
    }
}

impl std::str::FromStr for AblationAxis {
    type Err = SebotError;
    fn from_str(s: &str) -> Result<Self> {
        AblationAxis::ALL
            .into_iter()
            .find(|a| a.label() == s || a.label().replace('_', "-") == s)
            .ok_or_else(|| SebotError::InvalidArgument(format!("unknown ablation axis {s:?}")))
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AblationRow {
    pub label: String,
    pub mean_accuracy: f64,
    pub mean_f1: f64,
    pub per_seed: Vec<(u64, MetricsReport)>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("setting,seed,accuracy,f1,recall,precision\n");
        for row in &self.rows {
            for (seed, report) in &row.per_seed {
                out.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    row.label, seed, report.accuracy, report.f1, report.recall, report.precision
                ));
            }
            out.push_str(&format!(
                "{},mean,{},{},,\n",
                row.label, row.mean_accuracy, row.mean_f1
            ));
        }
        out
    }

    pub fn row(&self, label: &str) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.label == label)
    }
}

/// One training run per flag setting (full model first), sharing the same
/// seed list.
pub fn ablate(
    dataset: &Dataset,
    cfg: &TrainConfig,
    axes: &[AblationAxis],
    seeds: &[u64],
) -> Result<AblationTable> {
    if seeds.is_empty() {
        return Err(SebotError::InvalidArgument("ablate needs at least one seed".into()));
    }
    let mut rows = Vec::with_capacity(axes.len() + 1);
    let run_setting = |label: &str, setting_cfg: &TrainConfig| -> Result<AblationRow> {
        let mut per_seed = Vec::with_capacity(seeds.len());
        for &seed in seeds {
            let run_cfg = TrainConfig {
                seed,
                ..setting_cfg.clone()
            };
            let outcome = train(dataset, &run_cfg)?;
            per_seed.push((seed, outcome.report));
        }
        let mean = |f: fn(&MetricsReport) -> f64| {
            per_seed.iter().map(|(_, r)| f(r)).sum::<f64>() / per_seed.len() as f64
        };
        Ok(AblationRow {
            label: label.to_string(),
            mean_accuracy: mean(|r| r.accuracy),
            mean_f1: mean(|r| r.f1),
            per_seed,
        })
    };
    rows.push(run_setting("full", cfg)?);
    for axis in axes {
        let axis_cfg = axis.apply(cfg);
        rows.push(run_setting(axis.label(), &axis_cfg)?);
    }
    Ok(AblationTable { rows })
}
