//! Command-line interface: statistics, training, prediction, evaluation and
//! correlation exports. Every command writes deterministic bytes for a given
//! input and seed, so reruns diff clean.

use crate::cooccur::{plan_crcp_examples, plan_frcp_examples};
use crate::corpus::{enumerate_entity_pairs, load_dataset, RelationSchema};
use crate::error::{Error, Result};
use crate::evaluator::{build_report, predictions_from_json, PredictionSet};
use crate::heatmap::{self, HeatmapOptions};
use crate::relstats::{
    count_cooccurrence, counts_to_csv, frequency_to_csv, histogram_to_csv, learned_similarity,
    matrix_from_json, matrix_to_csv, matrix_to_json, multilabel_histogram, ppmi,
    relation_frequency, write_text,
};
use crate::trainer::{train, TrainedModel, TrainingConfig};
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::path::{Path, PathBuf};

#[derive(Debug, Parser)]
#[command(
    name = "relcorr",
    version,
    about = "Document-level relation extraction with relation co-occurrence modeling"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Co-occurrence counts, PPMI and frequency statistics for a dataset.
    Stats(StatsArgs),
    /// Train a model and write a checkpoint plus a per-epoch log.
    Train(TrainArgs),
    /// Score a dataset with a trained checkpoint.
    Predict(PredictArgs),
    /// Compare a prediction file against gold annotation.
    Evaluate(EvaluateArgs),
    /// Export the learned relation similarity matrix from a checkpoint.
    ExportCorrel(ExportCorrelArgs),
    /// Render a correlation matrix as an SVG heatmap plus a masked CSV.
    PlotHeatmap(PlotHeatmapArgs),
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    /// Dataset JSON (DocRED-style records).
    #[arg(long)]
    pub dataset: PathBuf,
    /// Relation schema JSON.
    #[arg(long)]
    pub schema: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Training config (JSON or TOML); defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Training dataset JSON.
    #[arg(long)]
    pub dataset: PathBuf,
    /// Development dataset JSON, used for threshold and checkpoint selection.
    #[arg(long)]
    pub dev: PathBuf,
    /// Relation schema JSON.
    #[arg(long)]
    pub schema: PathBuf,
    /// Output directory for the checkpoint and logs.
    #[arg(long)]
    pub out: PathBuf,
    /// Override the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Override the config epoch count.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Override the coarse/fine mixing weight.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Train the ablated model: no relation-aggregated features, no
    /// co-occurrence subtasks.
    #[arg(long)]
    pub no_correlation: bool,
    /// Refuse over-length documents instead of truncating.
    #[arg(long)]
    pub strict_length: bool,
    /// Also write the co-occurrence training examples constructed for the
    /// first documents, for inspection.
    #[arg(long)]
    pub dump_examples: bool,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    /// Checkpoint stem (the path passed to train's --out, plus /model).
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Dataset JSON to score.
    #[arg(long)]
    pub dataset: PathBuf,
    /// Output predictions JSON.
    #[arg(long)]
    pub out: PathBuf,
    /// Override the checkpoint's decision threshold.
    #[arg(long)]
    pub threshold: Option<f64>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Predictions JSON as written by `predict`.
    #[arg(long)]
    pub pred: PathBuf,
    /// Gold dataset JSON.
    #[arg(long)]
    pub gold: PathBuf,
    /// Relation schema JSON.
    #[arg(long)]
    pub schema: PathBuf,
    /// Training dataset JSON; enables the train-overlap and frequency-based
    /// metrics.
    #[arg(long)]
    pub train: Option<PathBuf>,
    /// Frequency cutoffs for the long-tail macro score.
    #[arg(long, value_delimiter = ',', default_value = "10,100")]
    pub k_list: Vec<u64>,
    /// Output report JSON.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ExportCorrelArgs {
    /// Checkpoint stem.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Output file; `.csv` for CSV, anything else for JSON.
    #[arg(long)]
    pub out: PathBuf,
    /// Dataset whose documents provide relation-token contexts; without it
    /// the static relation embeddings are used.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PlotHeatmapArgs {
    /// Correlation matrix JSON, as written by `stats` or `export-correl`.
    #[arg(long)]
    pub matrix: PathBuf,
    /// Output stem; `.svg` and `.csv` are written next to each other.
    #[arg(long)]
    pub out: PathBuf,
    /// Keep only the n strongest off-diagonal cells per row.
    #[arg(long)]
    pub top_n: Option<usize>,
    /// Clip displayed values at this ceiling.
    #[arg(long)]
    pub truncate: Option<f64>,
    /// Frequency CSV from `stats`; orders rows by descending train count.
    #[arg(long)]
    pub freq: Option<PathBuf>,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Stats(args) => run_stats(args),
        Command::Train(args) => run_train(args),
        Command::Predict(args) => run_predict(args),
        Command::Evaluate(args) => run_evaluate(args),
        Command::ExportCorrel(args) => run_export_correl(args),
        Command::PlotHeatmap(args) => run_plot_heatmap(args),
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))
}

fn run_stats(args: StatsArgs) -> Result<()> {
    let schema = RelationSchema::load(&args.schema)?;
    let docs = load_dataset(&args.dataset, &schema)?;
    let counts = count_cooccurrence(&docs, schema.len())?;
    let correlation = ppmi(&counts);
    let freq = relation_frequency(&docs, schema.len());
    let hist = multilabel_histogram(&docs);
    let names: Vec<String> = schema.ids().to_vec();
    ensure_dir(&args.out)?;
    write_text(args.out.join("cooccurrence.csv"), &counts_to_csv(&counts, &schema)?)?;
    write_text(args.out.join("ppmi.csv"), &matrix_to_csv(&correlation.values, &names)?)?;
    write_text(args.out.join("ppmi.json"), &matrix_to_json(&correlation.values, &names))?;
    write_text(args.out.join("frequency.csv"), &frequency_to_csv(&freq, &schema)?)?;
    write_text(args.out.join("histogram.csv"), &histogram_to_csv(&hist)?)?;
    println!(
        "stats: {} documents, {} relations -> {}",
        docs.len(),
        schema.len(),
        args.out.display()
    );
    Ok(())
}

fn run_train(args: TrainArgs) -> Result<()> {
    let mut config = match &args.config {
        Some(path) => TrainingConfig::load(path)?,
        None => TrainingConfig::default(),
    };
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(epochs) = args.epochs {
        config.epochs = epochs;
    }
    if let Some(alpha) = args.alpha {
        config.alpha = alpha;
    }
    if args.no_correlation {
        config.use_correlation = false;
    }
    if args.strict_length {
        config.strict_length = true;
    }
    config.validate()?;

    let schema = RelationSchema::load(&args.schema)?;
    let train_docs = load_dataset(&args.dataset, &schema)?;
    let dev_docs = load_dataset(&args.dev, &schema)?;
    if args.dump_examples {
        ensure_dir(&args.out)?;
        let dump = dump_cooccur_examples(&train_docs, &schema, &config);
        write_text(
            args.out.join("cooccur_examples.json"),
            &serde_json::to_string_pretty(&dump).expect("plans serialize"),
        )?;
    }

    let model = train(&train_docs, &dev_docs, &schema, &config)?;
    ensure_dir(&args.out)?;
    let (manifest, _) = model.save(args.out.join("model"))?;
    let mut log_lines = String::new();
    for entry in &model.history {
        log_lines.push_str(&serde_json::to_string(entry).expect("log entry serializes"));
        log_lines.push('\n');
    }
    write_text(args.out.join("train_log.jsonl"), &log_lines)?;
    write_text(
        args.out.join("config.json"),
        &serde_json::to_string_pretty(&config).expect("config serializes"),
    )?;
    println!(
        "train: best dev F1 {:.4} at threshold {:.2}, checkpoint {}",
        model.best_dev_f1,
        model.threshold,
        manifest.display()
    );
    Ok(())
}

/// Reconstruct, from raw annotation, the subtask examples the first
/// documents would contribute: same planning code as training, so the dump
/// shows real shapes.
fn dump_cooccur_examples(
    docs: &[crate::corpus::Document],
    schema: &RelationSchema,
    config: &TrainingConfig,
) -> serde_json::Value {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut out = Vec::new();
    for doc in docs.iter().take(config.batch_size) {
        let r_plus: Vec<usize> = doc.relation_set().into_iter().collect();
        let coarse =
            plan_crcp_examples(&r_plus, schema.len(), config.neg_per_pos_coarse, &mut rng);
        let pairs = enumerate_entity_pairs(doc);
        let non_na: Vec<usize> = pairs
            .iter()
            .enumerate()
            .filter(|(_, p)| !p.labels.is_empty())
            .map(|(i, _)| i)
            .collect();
        let na: Vec<usize> = pairs
            .iter()
            .enumerate()
            .filter(|(_, p)| p.labels.is_empty())
            .map(|(i, _)| i)
            .collect();
        let fine = plan_frcp_examples(&non_na, &na, config.neg_per_pos_fine, &mut rng);
        out.push(serde_json::json!({
            "doc": doc.id,
            "coarse": coarse,
            "fine": fine,
        }));
    }
    serde_json::Value::Array(out)
}

fn run_predict(args: PredictArgs) -> Result<()> {
    let model = TrainedModel::load(&args.checkpoint)?;
    let docs = load_dataset(&args.dataset, &model.schema)?;
    let threshold = match args.threshold {
        Some(t) if !(0.0 < t && t < 1.0) => {
            return Err(Error::data(format!(
                "threshold must lie strictly between 0 and 1, got {t}"
            )));
        }
        Some(t) => t,
        None => model.threshold,
    };
    let preds = model.predict_with_threshold(&docs, threshold)?;
    write_text(
        &args.out,
        &crate::evaluator::predictions_to_json(&preds, &model.schema),
    )?;
    println!(
        "predict: {} triplets over {} documents at threshold {threshold:.2} -> {}",
        preds.len(),
        docs.len(),
        args.out.display()
    );
    Ok(())
}

fn run_evaluate(args: EvaluateArgs) -> Result<()> {
    let schema = RelationSchema::load(&args.schema)?;
    let gold_docs = load_dataset(&args.gold, &schema)?;
    let pred = predictions_from_json(&read_text(&args.pred)?, &schema)?;
    let gold = PredictionSet::from_gold(&gold_docs);
    let train_docs = match &args.train {
        Some(path) => Some(load_dataset(path, &schema)?),
        None => None,
    };
    let report = build_report(
        &pred,
        &gold,
        &gold_docs,
        train_docs.as_deref(),
        schema.len(),
        &args.k_list,
    );
    write_text(
        &args.out,
        &serde_json::to_string_pretty(&report).expect("report serializes"),
    )?;
    println!(
        "evaluate: micro F1 {:.4} (P {:.4} / R {:.4}) -> {}",
        report.micro_f1,
        report.micro_precision,
        report.micro_recall,
        args.out.display()
    );
    Ok(())
}

fn run_export_correl(args: ExportCorrelArgs) -> Result<()> {
    let model = TrainedModel::load(&args.checkpoint)?;
    let docs = match &args.dataset {
        Some(path) => load_dataset(path, &model.schema)?,
        None => Vec::new(),
    };
    let embeddings = model.relation_embeddings(&docs)?;
    let similarity = learned_similarity(&embeddings);
    let names: Vec<String> = model.schema.ids().to_vec();
    let is_csv = args
        .out
        .extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    let text = if is_csv {
        matrix_to_csv(&similarity.values, &names)?
    } else {
        matrix_to_json(&similarity.values, &names)
    };
    write_text(&args.out, &text)?;
    println!(
        "export-correl: {}x{} similarity matrix -> {}",
        names.len(),
        names.len(),
        args.out.display()
    );
    Ok(())
}

fn parse_frequency_csv(text: &str, names: &[String]) -> Result<Vec<u64>> {
    let mut by_name = std::collections::HashMap::new();
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    for record in reader.records() {
        let record = record.map_err(|e| Error::data(format!("bad frequency CSV: {e}")))?;
        if record.len() < 2 {
            return Err(Error::data("frequency CSV needs relation,count columns"));
        }
        let count: u64 = record[1]
            .parse()
            .map_err(|_| Error::data(format!("bad count {:?} in frequency CSV", &record[1])))?;
        by_name.insert(record[0].to_string(), count);
    }
    names
        .iter()
        .map(|n| {
            by_name
                .get(n)
                .copied()
                .ok_or_else(|| Error::data(format!("frequency CSV is missing relation {n:?}")))
        })
        .collect()
}

fn run_plot_heatmap(args: PlotHeatmapArgs) -> Result<()> {
    let (matrix, names) = matrix_from_json(&read_text(&args.matrix)?)?;
    let freq = match &args.freq {
        Some(path) => Some(parse_frequency_csv(&read_text(path)?, &names)?),
        None => None,
    };
    let options = HeatmapOptions {
        top_n: args.top_n,
        truncate: args.truncate,
    };
    let masked = heatmap::prepare(&matrix, &names, freq.as_deref(), &options)?;
    let svg_path = args.out.with_extension("svg");
    let csv_path = args.out.with_extension("csv");
    write_text(&svg_path, &heatmap::to_svg(&masked))?;
    write_text(&csv_path, &heatmap::to_csv(&masked)?)?;
    println!(
        "plot-heatmap: {} and {}",
        svg_path.display(),
        csv_path.display()
    );
    Ok(())
}
