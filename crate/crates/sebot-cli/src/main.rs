//! Command-line experiment runner: dataset generation, tree building,
//! training, evaluation, ablations, the tree-construction benchmark and
//! the embedding/edge-weight exports. Every command resolves its
//! configuration as flags > config file > built-in defaults and records a
//! re-runnable manifest next to its outputs.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use sebot::autodiff::{load_checkpoint, save_checkpoint};
use sebot::dataio::{config_hash, convert_edge_list, save_dataset, Dataset};
use sebot::datagen::{generate, measure_homophily, SynthSpec};
use sebot::entropy::assignment_stack;
use sebot::pipeline::{
    ablate, bench_csv, bench_entropy, edge_weights, evaluate, node_embeddings, train,
    train_gcn_baseline, AblationAxis, AugMode, RunManifest, Split, TrainConfig,
};
use sebot::pooling::Readout;

#[derive(Parser)]
#[command(
    name = "sebot",
    version,
    about = "Structural-entropy multi-view contrastive social bot detection"
)]
struct Cli {
    /// Cap the worker thread pool (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic hierarchical-community dataset.
    GenData(GenDataArgs),
    /// Encoding-tree operations.
    #[command(subcommand)]
    Tree(TreeCommand),
    /// Train the full model on a dataset directory.
    Train(TrainArgs),
    /// Evaluate a finished run's checkpoint on a split.
    Evaluate(EvaluateArgs),
    /// Train the full model plus one run per ablation flag.
    Ablate(AblateArgs),
    /// Time fixed-height tree construction across edge counts and report
    /// the log-log slope.
    BenchEntropy(BenchArgs),
    /// Export the final-layer signed edge weights of a trained run as CSV.
    ExportEdgeWeights(ExportArgs),
    /// Export per-node concatenated embeddings of a trained run as CSV.
    ExportEmbeddings(ExportArgs),
    /// Convert an external edge-list dump into a dataset directory.
    Convert(ConvertArgs),
}

#[derive(Subcommand)]
enum TreeCommand {
    /// Build the whole-graph encoding tree and export it as JSON.
    Build(TreeBuildArgs),
}

/// Hyperparameter overrides shared by the training-style commands.
/// Precedence: flags > --config file > defaults.
#[derive(Args, Clone)]
struct ConfigArgs {
    /// TOML config file with any TrainConfig keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Encoding tree height k (>= 2) [default: 6]
    #[arg(long)]
    k: Option<usize>,
    /// Ego-subgraph order m (hops) [default: 2]
    #[arg(long)]
    m: Option<usize>,
    /// Edge-drop probability for the relational view [default: 0.3]
    #[arg(long)]
    drop_prob: Option<f64>,
    /// Hidden width [default: 32]
    #[arg(long)]
    hidden: Option<usize>,
    /// Relational encoder layers L [default: 2]
    #[arg(long)]
    layers: Option<usize>,
    /// AdamW learning rate [default: 0.01]
    #[arg(long)]
    lr: Option<f64>,
    /// Decoupled L2 weight decay [default: 0.003]
    #[arg(long)]
    weight_decay: Option<f64>,
    /// Dropout rate on hidden activations [default: 0.5]
    #[arg(long)]
    dropout: Option<f64>,
    /// Node-level contrastive weight lambda1 [default: 0.09]
    #[arg(long)]
    lambda1: Option<f64>,
    /// Subgraph-level contrastive weight lambda2 [default: 0.03]
    #[arg(long)]
    lambda2: Option<f64>,
    /// Contrastive temperature tau [default: 0.1]
    #[arg(long)]
    tau: Option<f64>,
    /// Gumbel trick temperature [default: 0.01]
    #[arg(long)]
    gumbel_tau: Option<f64>,
    /// Maximum training epochs [default: 70]
    #[arg(long)]
    epochs: Option<usize>,
    /// Run seed [default: 0]
    #[arg(long)]
    seed: Option<u64>,
    /// Subgraph readout: mean or sum [default: mean]
    #[arg(long)]
    readout: Option<String>,
    /// Contrastive batch cap [default: 256]
    #[arg(long)]
    contrastive_batch: Option<usize>,
    /// Ablation: drop the whole-graph tree view.
    #[arg(long)]
    no_graph_tree: bool,
    /// Ablation: drop the per-node subgraph tree views.
    #[arg(long)]
    no_subgraph_trees: bool,
    /// Ablation: replace channel-wise mixing with a plain sum.
    #[arg(long)]
    no_channel_mix: bool,
    /// Ablation: force unit edge weights and uniform mixing.
    #[arg(long)]
    rgcn_encoder: bool,
    /// View augmentation: edge_drop, feature_mask, feature_drop, edge_add
    /// [default: edge_drop]
    #[arg(long)]
    aug_mode: Option<String>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<TrainConfig> {
        let mut cfg: TrainConfig = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .with_context(|| format!("reading config {}", path.display()))?;
                toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
            }
            None => TrainConfig::default(),
        };
        macro_rules! set {
            ($field:ident, $opt:expr) => {
                if let Some(v) = $opt {
                    cfg.$field = v;
                }
            };
        }
        set!(tree_height, self.k);
        set!(subgraph_order, self.m);
        set!(drop_prob, self.drop_prob);
        set!(hidden, self.hidden);
        set!(layers, self.layers);
        set!(lr, self.lr);
        set!(weight_decay, self.weight_decay);
        set!(dropout, self.dropout);
        set!(lambda1, self.lambda1);
        set!(lambda2, self.lambda2);
        set!(tau, self.tau);
        set!(gumbel_tau, self.gumbel_tau);
        set!(max_epochs, self.epochs);
        set!(seed, self.seed);
        set!(contrastive_batch, self.contrastive_batch);
        if let Some(readout) = &self.readout {
            cfg.readout = match readout.as_str() {
                "mean" => Readout::Mean,
                "sum" => Readout::Sum,
                other => bail!("unknown readout {other:?} (mean|sum)"),
            };
        }
        if self.no_graph_tree {
            cfg.ablation.no_graph_tree = true;
        }
        if self.no_subgraph_trees {
            cfg.ablation.no_subgraph_trees = true;
        }
        if self.no_channel_mix {
            cfg.ablation.no_channel_mix = true;
        }
        if self.rgcn_encoder {
            cfg.ablation.rgcn_encoder = true;
        }
        if let Some(mode) = &self.aug_mode {
            cfg.ablation.aug_mode = match mode.as_str() {
                "edge_drop" => AugMode::EdgeDrop,
                "feature_mask" => AugMode::FeatureMask,
                "feature_drop" => AugMode::FeatureDrop,
                "edge_add" => AugMode::EdgeAdd,
                other => bail!(
                    "unknown aug mode {other:?} (edge_drop|feature_mask|feature_drop|edge_add)"
                ),
            };
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct GenDataArgs {
    /// Total node count (split evenly over the leaf communities).
    #[arg(long, default_value_t = 200)]
    nodes: usize,
    /// Target same-class edge fraction.
    #[arg(long, default_value_t = 0.53)]
    homophily: f64,
    /// Relation count.
    #[arg(long, default_value_t = 2)]
    relations: usize,
    /// Feature dimension.
    #[arg(long, default_value_t = 16)]
    feature_dim: usize,
    /// Class mean separation in noise standard deviations.
    #[arg(long, default_value_t = 1.0)]
    class_separation: f64,
    /// Hierarchy branching, comma separated (e.g. 2,2).
    #[arg(long, default_value = "2,2")]
    levels: String,
    /// Bot fraction per leaf community, cycled (comma separated).
    #[arg(long, default_value = "0.85,0.15")]
    class_mix: String,
    /// Directed edge probability per community distance (levels+1 values).
    #[arg(long, default_value = "0.02,0.004,0.001")]
    edge_probs: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output dataset directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TreeBuildArgs {
    /// Dataset directory.
    #[arg(long)]
    input: PathBuf,
    /// Tree height k (>= 2).
    #[arg(long)]
    height: usize,
    /// Output JSON path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset directory.
    #[arg(long)]
    data: PathBuf,
    /// Run output directory (checkpoint, metrics, manifest).
    #[arg(long)]
    out: PathBuf,
    /// Also train the plain-GCN baseline for comparison.
    #[arg(long)]
    with_baseline: bool,
    #[command(flatten)]
    overrides: ConfigArgs,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Dataset directory.
    #[arg(long)]
    data: PathBuf,
    /// Finished run directory (holds manifest.json and checkpoint.*).
    #[arg(long)]
    run: PathBuf,
    /// Split to score: train, val or test.
    #[arg(long, default_value = "test")]
    split: String,
    /// Output directory for metrics + manifest.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AblateArgs {
    /// Dataset directory.
    #[arg(long)]
    data: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated axes (default: all of no_graph_tree,
    /// no_subgraph_trees, no_channel_mix, rgcn_encoder, feature_mask,
    /// feature_drop, edge_add).
    #[arg(long)]
    axes: Option<String>,
    /// Comma-separated seeds shared by every setting.
    #[arg(long, default_value = "0,1,2,3,4")]
    seeds: String,
    #[command(flatten)]
    overrides: ConfigArgs,
}

#[derive(Args)]
struct BenchArgs {
    /// Comma-separated edge counts.
    #[arg(long, default_value = "1000,4000,16000,64000")]
    sizes: String,
    /// Tree height.
    #[arg(long, default_value_t = 6)]
    k: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory for bench.csv + manifest.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ExportArgs {
    /// Dataset directory.
    #[arg(long)]
    data: PathBuf,
    /// Finished run directory (holds manifest.json and checkpoint.*).
    #[arg(long)]
    run: PathBuf,
    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ConvertArgs {
    /// Input format; only `edgelist` is supported.
    #[arg(long, default_value = "edgelist")]
    format: String,
    /// Edge list file: `src dst [relation]` per line.
    #[arg(long)]
    input: PathBuf,
    /// Optional headerless feature CSV (row i = node i).
    #[arg(long)]
    features: Option<PathBuf>,
    /// Optional labels CSV (`node,label` with header).
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Optional splits JSON.
    #[arg(long)]
    splits: Option<PathBuf>,
    /// Output dataset directory.
    #[arg(long)]
    out: PathBuf,
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .context("setting thread pool size")?;
    }
    match cli.command {
        Command::GenData(args) => gen_data(args),
        Command::Tree(TreeCommand::Build(args)) => tree_build(args),
        Command::Train(args) => run_train(args),
        Command::Evaluate(args) => run_evaluate(args),
        Command::Ablate(args) => run_ablate(args),
        Command::BenchEntropy(args) => run_bench(args),
        Command::ExportEdgeWeights(args) => export_weights(args),
        Command::ExportEmbeddings(args) => export_embeddings(args),
        Command::Convert(args) => run_convert(args),
    }
}

fn parse_list<T: std::str::FromStr>(text: &str, what: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    text.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| {
            t.parse::<T>()
                .map_err(|e| anyhow::anyhow!("bad {what} entry {t:?}: {e}"))
        })
        .collect()
}

fn write_json<T: serde::Serialize>(value: &T, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let file =
        std::fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    serde_json::to_writer_pretty(std::io::BufWriter::new(file), value)?;
    Ok(())
}

fn write_manifest(
    out: &Path,
    command: &str,
    cfg: &TrainConfig,
    dataset_hash: &str,
    timings: BTreeMap<String, f64>,
    outputs: Vec<String>,
) -> Result<()> {
    let manifest = RunManifest {
        command: command.to_string(),
        config: cfg.clone(),
        seed: cfg.seed,
        dataset_hash: dataset_hash.to_string(),
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        timings_secs: timings,
        outputs,
    };
    write_json(&manifest, &out.join("manifest.json"))
}

fn gen_data(args: GenDataArgs) -> Result<()> {
    let levels: Vec<usize> = parse_list(&args.levels, "levels")?;
    let leaves: usize = levels.iter().product();
    if leaves == 0 || args.nodes % leaves != 0 {
        bail!(
            "node count {} not divisible by {leaves} leaf communities",
            args.nodes
        );
    }
    let spec = SynthSpec {
        levels,
        nodes_per_leaf: args.nodes / leaves,
        class_mix: parse_list(&args.class_mix, "class_mix")?,
        level_edge_probs: parse_list(&args.edge_probs, "edge_probs")?,
        homophily: args.homophily,
        feature_dim: args.feature_dim,
        class_separation: args.class_separation,
        relations: args.relations,
        seed: args.seed,
    };
    let started = Instant::now();
    let graph = generate(&spec)?;
    save_dataset(&graph, &args.out)?;
    let realized = measure_homophily(&graph)?;
    write_json(&spec, &args.out.join("genspec.json"))?;
    let cfg = TrainConfig {
        seed: args.seed,
        ..TrainConfig::default()
    };
    let mut timings = BTreeMap::new();
    timings.insert("generate_secs".into(), started.elapsed().as_secs_f64());
    write_manifest(
        &args.out,
        "gen-data",
        &cfg,
        &sebot::dataio::dataset_hash(&graph),
        timings,
        vec![
            "edges.csv".into(),
            "features.csv".into(),
            "labels.csv".into(),
            "splits.json".into(),
        ],
    )?;
    println!(
        "generated {} nodes, {} directed edges, homophily {realized:.3} -> {}",
        graph.num_nodes,
        graph.total_edges(),
        args.out.display()
    );
    Ok(())
}

fn tree_build(args: TreeBuildArgs) -> Result<()> {
    let dataset = Dataset::load(&args.input)?;
    let started = Instant::now();
    let collapsed = sebot::graph::collapse_to_undirected(&dataset.graph);
    let tree = sebot::entropy::minimize_to_height(&collapsed, args.height)?;
    let stack = assignment_stack(&tree)?;
    write_json(&tree.to_json(), &args.out)?;
    println!(
        "tree over {} nodes: height {}, {} top-level communities, {:.6} bits ({:.3}s) -> {}",
        collapsed.num_nodes,
        tree.height(),
        stack.levels.last().map_or(0, |s| s.rows()),
        tree.entropy_bits(),
        started.elapsed().as_secs_f64(),
        args.out.display()
    );
    Ok(())
}

fn run_train(args: TrainArgs) -> Result<()> {
    let cfg = args.overrides.resolve()?;
    let dataset = Dataset::load(&args.data)?;
    let outcome = train(&dataset, &cfg)?;
    std::fs::create_dir_all(&args.out)?;
    let prefix = args.out.join("checkpoint");
    save_checkpoint(&outcome.store, &prefix, &config_hash(&cfg))?;
    write_json(&outcome.report, &args.out.join("metrics.json"))?;
    std::fs::write(args.out.join("trace.csv"), outcome.report.trace_csv())?;

    let mut outputs = vec![
        "checkpoint.bin".into(),
        "checkpoint.json".into(),
        "metrics.json".into(),
        "trace.csv".into(),
    ];
    let mut timings = BTreeMap::new();
    timings.insert("view_prep_secs".into(), outcome.report.timings.view_prep_secs);
    timings.insert("train_secs".into(), outcome.report.timings.train_secs);
    if args.with_baseline {
        let baseline = train_gcn_baseline(&dataset, &cfg)?;
        write_json(&baseline, &args.out.join("baseline_metrics.json"))?;
        outputs.push("baseline_metrics.json".into());
        println!(
            "gcn baseline: accuracy {:.4}, f1 {:.4}",
            baseline.accuracy, baseline.f1
        );
    }
    write_manifest(&args.out, "train", &cfg, &dataset.hash, timings, outputs)?;
    println!(
        "test accuracy {:.4}, f1 {:.4}, recall {:.4}, precision {:.4} (best epoch {})",
        outcome.report.accuracy,
        outcome.report.f1,
        outcome.report.recall,
        outcome.report.precision,
        outcome.report.best_epoch
    );
    Ok(())
}

fn load_run(run: &Path) -> Result<(TrainConfig, sebot::autodiff::ParamStore)> {
    let manifest_path = run.join("manifest.json");
    let manifest: RunManifest = serde_json::from_reader(std::io::BufReader::new(
        std::fs::File::open(&manifest_path)
            .with_context(|| format!("opening {}", manifest_path.display()))?,
    ))?;
    let (store, ckpt) = load_checkpoint(&run.join("checkpoint"))?;
    let expected = config_hash(&manifest.config);
    if ckpt.config_hash != expected {
        bail!(
            "checkpoint config hash {} does not match run manifest ({expected})",
            ckpt.config_hash
        );
    }
    Ok((manifest.config, store))
}

fn run_evaluate(args: EvaluateArgs) -> Result<()> {
    let dataset = Dataset::load(&args.data)?;
    let (cfg, store) = load_run(&args.run)?;
    let split: Split = args.split.parse()?;
    let report = evaluate(&dataset, &cfg, &store, split)?;
    std::fs::create_dir_all(&args.out)?;
    write_json(&report, &args.out.join("metrics.json"))?;
    write_manifest(
        &args.out,
        "evaluate",
        &cfg,
        &dataset.hash,
        BTreeMap::new(),
        vec!["metrics.json".into()],
    )?;
    println!(
        "{} accuracy {:.4}, f1 {:.4}, recall {:.4}, precision {:.4}",
        args.split, report.accuracy, report.f1, report.recall, report.precision
    );
    Ok(())
}

fn run_ablate(args: AblateArgs) -> Result<()> {
    let cfg = args.overrides.resolve()?;
    let dataset = Dataset::load(&args.data)?;
    let axes: Vec<AblationAxis> = match &args.axes {
        Some(text) => parse_list(text, "axes")?,
        None => AblationAxis::ALL.to_vec(),
    };
    let seeds: Vec<u64> = parse_list(&args.seeds, "seeds")?;
    let started = Instant::now();
    let table = ablate(&dataset, &cfg, &axes, &seeds)?;
    std::fs::create_dir_all(&args.out)?;
    write_json(&table, &args.out.join("ablation.json"))?;
    std::fs::write(args.out.join("ablation.csv"), table.to_csv())?;
    let mut timings = BTreeMap::new();
    timings.insert("ablate_secs".into(), started.elapsed().as_secs_f64());
    write_manifest(
        &args.out,
        "ablate",
        &cfg,
        &dataset.hash,
        timings,
        vec!["ablation.json".into(), "ablation.csv".into()],
    )?;
    for row in &table.rows {
        println!(
            "{:<20} mean accuracy {:.4}, mean f1 {:.4}",
            row.label, row.mean_accuracy, row.mean_f1
        );
    }
    Ok(())
}

fn run_bench(args: BenchArgs) -> Result<()> {
    let sizes: Vec<usize> = parse_list(&args.sizes, "sizes")?;
    let (rows, slope) = bench_entropy(&sizes, args.k, args.seed)?;
    std::fs::create_dir_all(&args.out)?;
    std::fs::write(args.out.join("bench.csv"), bench_csv(&rows))?;
    let cfg = TrainConfig {
        tree_height: args.k,
        seed: args.seed,
        ..TrainConfig::default()
    };
    let mut timings = BTreeMap::new();
    for row in &rows {
        timings.insert(format!("edges_{}", row.edges), row.seconds);
        println!(
            "m = {:>8} edges, n = {:>7}: {:.4}s",
            row.edges, row.nodes, row.seconds
        );
    }
    timings.insert("loglog_slope".into(), slope);
    write_manifest(
        &args.out,
        "bench-entropy",
        &cfg,
        "none",
        timings,
        vec!["bench.csv".into()],
    )?;
    println!("log-log slope of time vs edges: {slope:.3}");
    Ok(())
}

fn export_weights(args: ExportArgs) -> Result<()> {
    let dataset = Dataset::load(&args.data)?;
    let (cfg, store) = load_run(&args.run)?;
    let report = edge_weights(&dataset, &cfg, &store)?;
    if let Some(parent) = args.out.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut out = String::from("src,dst,relation,omega\n");
    for (r, rel) in report.relations.iter().enumerate() {
        for &(src, dst, omega) in rel {
            out.push_str(&format!("{src},{dst},{r},{omega}\n"));
        }
    }
    std::fs::write(&args.out, out)?;
    println!(
        "wrote {} edge weights -> {}",
        report.relations.iter().map(|r| r.len()).sum::<usize>(),
        args.out.display()
    );
    Ok(())
}

fn export_embeddings(args: ExportArgs) -> Result<()> {
    let dataset = Dataset::load(&args.data)?;
    let (cfg, store) = load_run(&args.run)?;
    let embeddings = node_embeddings(&dataset, &cfg, &store)?;
    if let Some(parent) = args.out.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut out = String::from("node_id");
    for j in 0..embeddings.cols() {
        out.push_str(&format!(",e{j}"));
    }
    out.push('\n');
    for i in 0..embeddings.rows() {
        out.push_str(&format!("{i}"));
        for v in embeddings.row(i) {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    std::fs::write(&args.out, out)?;
    println!(
        "wrote {} x {} embeddings -> {}",
        embeddings.rows(),
        embeddings.cols(),
        args.out.display()
    );
    Ok(())
}

fn run_convert(args: ConvertArgs) -> Result<()> {
    if args.format != "edgelist" {
        bail!("unsupported format {:?} (only `edgelist`)", args.format);
    }
    let graph = convert_edge_list(
        &args.input,
        args.features.as_deref(),
        args.labels.as_deref(),
        args.splits.as_deref(),
        &args.out,
    )?;
    println!(
        "converted {} nodes, {} directed edges, {} relations -> {}",
        graph.num_nodes,
        graph.total_edges(),
        graph.num_relations(),
        args.out.display()
    );
    Ok(())
}
