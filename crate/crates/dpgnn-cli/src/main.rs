//! Command-line entry point for the dual-perception graph-learning
//! pipeline: train, eval, analyze, gen-synthetic, and export.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use dpgnn_core::analysis::{graph_summary, DEFAULT_MAX_DEPTH};
use dpgnn_core::model::{AggregatorKind, PerceptionMode};
use dpgnn_core::train::{
    accuracy_of, evaluate_accuracy, fit_prepared, prepare_graphs, TrainConfig,
};
use dpgnn_core::model;

use dpgnn_cli::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use dpgnn_cli::config_file::{load_config, serialize_config};
use dpgnn_cli::dataset::{load_dataset, save_dataset, DatasetBundle};
use dpgnn_cli::export::{
    export_artifacts, write_history_csv, write_metrics_csv, write_topology_csvs,
};
use dpgnn_cli::synthetic::{generate_synthetic, SyntheticParams};

#[derive(Parser)]
#[command(
    name = "dpgnn",
    version,
    about = "Dual-perception graph neural network laboratory"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model on a dataset directory.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset split.
    Eval(EvalArgs),
    /// Topology statistics of a dataset: degrees, components, inter-class rates.
    Analyze(AnalyzeArgs),
    /// Generate a seeded stochastic-block-model dataset.
    GenSynthetic(GenSyntheticArgs),
    /// Export embeddings, attention tables, and metrics from a checkpoint.
    Export(ExportArgs),
}

#[derive(Args)]
struct ConfigOverrides {
    /// Training configuration file (key = value lines).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the perception mode (dual|topology_only|feature_only|mlp_only).
    #[arg(long)]
    mode: Option<PerceptionMode>,
    /// Override the aggregator (attention|mean|max).
    #[arg(long)]
    agg: Option<AggregatorKind>,
}

impl ConfigOverrides {
    fn resolve(&self) -> Result<TrainConfig> {
        let mut config = match &self.config {
            Some(path) => load_config(path)
                .with_context(|| format!("loading config {}", path.display()))?,
            None => TrainConfig::default(),
        };
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        if let Some(mode) = self.mode {
            config.mode = mode;
        }
        if let Some(agg) = self.agg {
            config.aggregator = agg;
        }
        Ok(config)
    }
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset directory (edges.tsv, features.csv, labels.tsv, split.tsv).
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    overrides: ConfigOverrides,
    /// Output directory for checkpoint.bin, history.csv, and config.conf.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Repeat training with seeds seed..seed+RUNS-1 and report mean and
    /// standard deviation (best and worst 5 runs dropped when RUNS >= 20).
    #[arg(long, default_value_t = 1)]
    runs: usize,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Node set to score: train, val, test, or all.
    #[arg(long, default_value = "test")]
    nodes: String,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[arg(long)]
    data: PathBuf,
    /// Output directory for topology_metrics.csv and inter_class.csv.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Maximum shortest-path length to profile.
    #[arg(long, default_value_t = DEFAULT_MAX_DEPTH)]
    max_len: usize,
}

#[derive(Args)]
struct GenSyntheticArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 600)]
    nodes: usize,
    #[arg(long, default_value_t = 4)]
    classes: usize,
    #[arg(long, default_value_t = 0.05)]
    p_in: f64,
    #[arg(long, default_value_t = 0.005)]
    p_out: f64,
    #[arg(long, default_value_t = 32)]
    dim: usize,
    #[arg(long, default_value_t = 0.3)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct ExportArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Train(args) => run_train(args),
        Command::Eval(args) => run_eval(args),
        Command::Analyze(args) => run_analyze(args),
        Command::GenSynthetic(args) => run_gen_synthetic(args),
        Command::Export(args) => run_export(args),
    }
}

fn load_bundle(path: &PathBuf) -> Result<DatasetBundle> {
    load_dataset(path).with_context(|| format!("loading dataset {}", path.display()))
}

fn run_train(args: TrainArgs) -> Result<()> {
    if args.runs < 1 {
        bail!("--runs must be at least 1");
    }
    let base_config = args.overrides.resolve()?;
    let bundle = load_bundle(&args.data)?;
    println!(
        "dataset {}: n={} m={} C={} d={}",
        bundle.name,
        bundle.graph.node_count(),
        bundle.graph.edge_count(),
        bundle.graph.num_classes(),
        bundle.features.dim()
    );

    // Graphs depend on the dataset and config only, not the seed.
    let prepared = prepare_graphs(&bundle.graph, &bundle.features, &base_config)?;
    let model_cfg = base_config.model_config();
    let labels = bundle.graph.labels();

    let mut test_accuracies = Vec::with_capacity(args.runs);
    for run in 0..args.runs {
        let config = TrainConfig {
            seed: base_config.seed + run as u64,
            ..base_config.clone()
        };
        let result = fit_prepared(&bundle.graph, &bundle.features, &bundle.split, &config, &prepared)?;
        let (pt, pf) = prepared.as_options();
        let probs = model::predict(&bundle.features, pt, pf, &result.params, &model_cfg)?;
        let train_acc = accuracy_of(&probs, labels, bundle.split.train());
        let val_acc = if bundle.split.val().is_empty() {
            f64::NAN
        } else {
            accuracy_of(&probs, labels, bundle.split.val())
        };
        let test_acc = if bundle.split.test().is_empty() {
            f64::NAN
        } else {
            accuracy_of(&probs, labels, bundle.split.test())
        };
        println!(
            "run seed={}: {} epochs (best {}), train {:.4} val {:.4} test {:.4}",
            config.seed,
            result.history.len(),
            result.best_epoch,
            train_acc,
            val_acc,
            test_acc
        );
        test_accuracies.push(test_acc);

        if args.runs == 1 {
            if let Some(out) = &args.out {
                std::fs::create_dir_all(out)
                    .with_context(|| format!("creating {}", out.display()))?;
                let checkpoint = Checkpoint {
                    config: config.clone(),
                    params: result.params.clone(),
                    optimizer: result.optimizer.clone(),
                    best_epoch: result.best_epoch as u64,
                    rng_seed: config.seed,
                };
                save_checkpoint(&checkpoint, &out.join("checkpoint.bin"))?;
                write_history_csv(&result.history, &out.join("history.csv"))?;
                std::fs::write(out.join("config.conf"), serialize_config(&config))
                    .with_context(|| format!("writing config to {}", out.display()))?;
                println!("artifacts written to {}", out.display());
            }
        }
    }

    if args.runs > 1 {
        let (mean, std, used) = summarize_runs(&test_accuracies);
        println!(
            "test accuracy over {used} runs: {:.4} +/- {:.4}",
            mean, std
        );
        if let Some(out) = &args.out {
            std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
            let mut rows = vec![
                ("runs".to_owned(), args.runs.to_string()),
                ("runs_summarized".to_owned(), used.to_string()),
                ("test_accuracy_mean".to_owned(), format!("{mean}")),
                ("test_accuracy_std".to_owned(), format!("{std}")),
            ];
            for (i, acc) in test_accuracies.iter().enumerate() {
                rows.push((format!("run_{}_test_accuracy", base_config.seed + i as u64), format!("{acc}")));
            }
            write_metrics_csv(&rows, &out.join("runs.csv"))?;
            println!("run summary written to {}", out.display());
        }
    }
    Ok(())
}

/// Mean and sample standard deviation; when at least 20 runs are present
/// the best and worst 5 are dropped first.
fn summarize_runs(accuracies: &[f64]) -> (f64, f64, usize) {
    let mut sorted: Vec<f64> = accuracies.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite accuracies"));
    let trimmed: &[f64] = if sorted.len() >= 20 {
        &sorted[5..sorted.len() - 5]
    } else {
        &sorted
    };
    let n = trimmed.len() as f64;
    let mean = trimmed.iter().sum::<f64>() / n;
    let var = if trimmed.len() > 1 {
        trimmed.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt(), trimmed.len())
}

fn run_eval(args: EvalArgs) -> Result<()> {
    let bundle = load_bundle(&args.data)?;
    let checkpoint = load_checkpoint(&args.checkpoint)
        .with_context(|| format!("loading checkpoint {}", args.checkpoint.display()))?;
    checkpoint.check_compatible(
        bundle.graph.node_count(),
        bundle.features.dim(),
        bundle.graph.num_classes(),
    )?;
    let all_nodes: Vec<usize> = (0..bundle.graph.node_count()).collect();
    let nodes: &[usize] = match args.nodes.as_str() {
        "train" => bundle.split.train(),
        "val" => bundle.split.val(),
        "test" => bundle.split.test(),
        "all" => &all_nodes,
        other => bail!("unknown node set `{other}` (expected train, val, test, or all)"),
    };
    let prepared = prepare_graphs(&bundle.graph, &bundle.features, &checkpoint.config)?;
    let (pt, pf) = prepared.as_options();
    let accuracy = evaluate_accuracy(
        &checkpoint.params,
        &bundle.features,
        pt,
        pf,
        &checkpoint.config.model_config(),
        bundle.graph.labels(),
        nodes,
    )?;
    println!(
        "{} accuracy on {} ({} nodes): {:.4}",
        bundle.name,
        args.nodes,
        nodes.len(),
        accuracy
    );
    Ok(())
}

fn run_analyze(args: AnalyzeArgs) -> Result<()> {
    if args.max_len < 1 {
        bail!("--max-len must be at least 1");
    }
    let bundle = load_bundle(&args.data)?;
    let report = graph_summary(&bundle.graph, args.max_len);
    println!("dataset {}", bundle.name);
    println!("  nodes        {}", report.nodes);
    println!("  edges        {}", report.edges);
    println!("  avg degree   {:.4}", report.avg_degree);
    println!(
        "  components   {} (largest {})",
        report.component_count(),
        report.component_sizes.first().copied().unwrap_or(0)
    );
    println!("  length  pairs      inter-class  rate");
    for row in &report.inter_class {
        match row.rate {
            Some(rate) => println!(
                "  {:<7} {:<10} {:<12} {:.4}",
                row.length, row.pairs, row.inter_pairs, rate
            ),
            None => println!(
                "  {:<7} {:<10} {:<12} undefined",
                row.length, row.pairs, row.inter_pairs
            ),
        }
    }
    if let Some(out) = &args.out {
        write_topology_csvs(&report, out)?;
        println!("report written to {}", out.display());
    }
    Ok(())
}

fn run_gen_synthetic(args: GenSyntheticArgs) -> Result<()> {
    let bundle = generate_synthetic(&SyntheticParams {
        nodes: args.nodes,
        classes: args.classes,
        p_in: args.p_in,
        p_out: args.p_out,
        feature_dim: args.dim,
        feature_noise: args.noise,
        seed: args.seed,
    })?;
    save_dataset(&bundle, &args.out)?;
    println!(
        "wrote {} ({} nodes, {} edges, {} classes, split {}/{}/{}) to {}",
        bundle.name,
        bundle.graph.node_count(),
        bundle.graph.edge_count(),
        bundle.graph.num_classes(),
        bundle.split.train().len(),
        bundle.split.val().len(),
        bundle.split.test().len(),
        args.out.display()
    );
    Ok(())
}

fn run_export(args: ExportArgs) -> Result<()> {
    let bundle = load_bundle(&args.data)?;
    let checkpoint = load_checkpoint(&args.checkpoint)
        .with_context(|| format!("loading checkpoint {}", args.checkpoint.display()))?;
    checkpoint.check_compatible(
        bundle.graph.node_count(),
        bundle.features.dim(),
        bundle.graph.num_classes(),
    )?;
    let prepared = prepare_graphs(&bundle.graph, &bundle.features, &checkpoint.config)?;
    export_artifacts(
        &checkpoint.params,
        &bundle,
        &prepared,
        &checkpoint.config,
        checkpoint.best_epoch,
        &args.out,
    )?;
    println!("artifacts written to {}", args.out.display());
    Ok(())
}
