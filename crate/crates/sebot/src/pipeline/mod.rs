//! End-to-end orchestration: view preparation, the training loop,
//! evaluation, ablations, the plain-GCN baseline, and the tree-construction
//! benchmark.

mod baseline;
mod bench;
mod metrics;
mod model;
mod train;
mod views;

pub use baseline::train_gcn_baseline;
pub use bench::{bench_csv, bench_entropy, BenchRow};
pub use metrics::{metrics_from_confusion, EpochTrace, MetricsReport, Timings};
pub use model::{Model, ViewEmbeddings};
pub use train::{
    ablate, edge_weights, evaluate, node_embeddings, train, AblationAxis, AblationRow,
    AblationTable, Split, TrainOutcome,
};
pub use views::{prepare_views, SubgraphView, Views};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::pooling::Readout;

/// Graph augmentation used to produce the relational view.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugMode {
    /// Remove each directed edge with probability `drop_prob`.
    #[default]
    EdgeDrop,
    /// Keep all edges; zero whole feature columns at rate `drop_prob`.
    FeatureMask,
    /// Keep all edges; zero feature entries at rate `drop_prob`.
    FeatureDrop,
    /// Insert `drop_prob * |E_r|` random edges per relation.
    EdgeAdd,
}

impl AugMode {
    pub fn tag(&self) -> &'static str {
        match self {
            AugMode::EdgeDrop => "edge_drop",
            AugMode::FeatureMask => "feature_mask",
            AugMode::FeatureDrop => "feature_drop",
            AugMode::EdgeAdd => "edge_add",
        }
    }
}

/// Component toggles mirroring the ablation table.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct AblationFlags {
    /// Drop the whole-graph tree view (and the node-level contrastive term).
    pub no_graph_tree: bool,
    /// Drop the per-node subgraph tree view (and the subgraph-level term).
    pub no_subgraph_trees: bool,
    /// Replace channel-wise mixing with a plain sum over relations.
    pub no_channel_mix: bool,
    /// Force unit edge weights and uniform mixing (relational GCN).
    pub rgcn_encoder: bool,
    pub aug_mode: AugMode,
}

/// Full experiment configuration. Defaults follow the reference
/// hyperparameter table (tree depth 6, subgraph order 2, hidden width 32,
/// AdamW at lr 0.01 with 3e-3 decay, dropout 0.5, loss weights 0.09/0.03,
/// temperature 0.1, trick temperature 0.01, 70 epochs).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Encoding-tree height k (>= 2).
    pub tree_height: usize,
    /// Ego-subgraph order m (hops).
    pub subgraph_order: usize,
    /// Edge-drop probability for the relational view (also the rate for
    /// the alternative augmentations).
    pub drop_prob: f64,
    pub hidden: usize,
    /// Relational encoder depth L.
    pub layers: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub dropout: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    /// Contrastive temperature.
    pub tau: f64,
    /// Gumbel trick temperature.
    pub gumbel_tau: f64,
    pub max_epochs: usize,
    pub seed: u64,
    pub readout: Readout,
    /// Contrastive losses run on a batch of at most this many nodes.
    pub contrastive_batch: usize,
    pub ablation: AblationFlags,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            tree_height: 6,
            subgraph_order: 2,
            drop_prob: 0.3,
            hidden: 32,
            layers: 2,
            lr: 0.01,
            weight_decay: 3e-3,
            dropout: 0.5,
            lambda1: 0.09,
            lambda2: 0.03,
            tau: 0.1,
            gumbel_tau: 0.01,
            max_epochs: 70,
            seed: 0,
            readout: Readout::Mean,
            contrastive_batch: 256,
            ablation: AblationFlags::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> crate::Result<()> {
        if self.tree_height < 2 {
            return Err(crate::SebotError::InvalidArgument(
                "tree_height must be at least 2".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.drop_prob) {
            return Err(crate::SebotError::InvalidArgument(
                "drop_prob must lie in [0, 1]".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(crate::SebotError::InvalidArgument(
                "dropout must lie in [0, 1)".into(),
            ));
        }
        if self.gumbel_tau <= 0.0 || self.tau <= 0.0 {
            return Err(crate::SebotError::InvalidArgument(
                "temperatures must be positive".into(),
            ));
        }
        if self.lambda1 < 0.0 || self.lambda2 < 0.0 {
            return Err(crate::SebotError::InvalidArgument(
                "loss weights must be nonnegative".into(),
            ));
        }
        if self.hidden == 0 || self.layers == 0 || self.max_epochs == 0 {
            return Err(crate::SebotError::InvalidArgument(
                "hidden, layers and max_epochs must be positive".into(),
            ));
        }
        if self.contrastive_batch < 2 {
            return Err(crate::SebotError::InvalidArgument(
                "contrastive_batch must be at least 2".into(),
            ));
        }
        Ok(())
    }
}

/// Everything needed to re-run a command exactly.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: TrainConfig,
    pub seed: u64,
    pub dataset_hash: String,
    pub code_version: String,
    pub timings_secs: std::collections::BTreeMap<String, f64>,
    pub outputs: Vec<String>,
}

/// Stable derived seed for a named random stream.
pub fn subseed(seed: u64, label: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(label.as_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

#[cfg(test)]
mod tests;
