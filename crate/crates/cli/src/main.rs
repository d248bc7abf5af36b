//! One binary, five subcommands: `datagen`, `ingest`, `train`, `evaluate`,
//! `probe`, plus `replay` to re-execute any run from its manifest.
//!
//! Precedence for settings: built-in defaults, then the `--config` file,
//! then explicit flags. Every run writes a `run_manifest.json` next to its
//! outputs. Failures print one machine-parseable line to stderr
//! (`error: category=<c> ...`) and exit with a category-specific code.

mod manifest;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use semanchor::analysis;
use semanchor::checkpoint;
use semanchor::corpus::{Corpus, Split};
use semanchor::datagen::{generate_corpus, ingest_wikisql, GenConfig};
use semanchor::model::{DecodeMode, ModelConfig};
use semanchor::training::{fit, Ablation, TrainConfig};

const OUT_ENV: &str = "SEMANCHOR_OUT";

#[derive(Parser)]
#[command(name = "semanchor", version, about = "Schema-grounded semantic parsing at desk scale")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a seeded synthetic corpus.
    Datagen(DatagenArgs),
    /// Convert WikiSQL-format files into the native corpus format.
    Ingest(IngestArgs),
    /// Train a model on a corpus.
    Train(TrainArgs),
    /// Decode a split and score execution accuracy and hallucinations.
    Evaluate(EvaluateArgs),
    /// Inspect a checkpoint: layer-weight distributions and per-layer
    /// decodings of one example.
    Probe(ProbeArgs),
    /// Re-execute a recorded run from its manifest.
    Replay(ReplayArgs),
}

#[derive(Args)]
struct DatagenArgs {
    /// JSON config file with a "datagen" section.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config-file seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct IngestArgs {
    /// WikiSQL tables file (line-delimited JSON).
    #[arg(long)]
    tables: PathBuf,
    /// WikiSQL data file (line-delimited JSON).
    #[arg(long)]
    data: PathBuf,
    /// Split assigned to the converted examples.
    #[arg(long, default_value = "train")]
    split: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// JSON config file with "model" and "train" sections.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// full | no_sae | no_saa | no_hierarchy | baseline
    #[arg(long)]
    ablation: Option<String>,
    /// Worker threads for within-batch parallelism (0 = default pool).
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, default_value = "test")]
    split: String,
    /// Beam width; omitted means greedy decoding.
    #[arg(long)]
    beam: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ProbeArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    /// Example to decode layer by layer, e.g. ex000017.
    #[arg(long)]
    example_id: String,
    /// Also write (task, layer, weight) rows for external plotting.
    #[arg(long)]
    emit_plot_data: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReplayArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Error category for the single-line report and the exit code.
#[derive(Debug, Clone, Copy)]
enum Category {
    Io,
    Config,
    Data,
    Checkpoint,
}

impl Category {
    fn code(self) -> u8 {
        match self {
            Category::Io => 3,
            Category::Config => 4,
            Category::Data => 5,
            Category::Checkpoint => 6,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Category::Io => "io",
            Category::Config => "config",
            Category::Data => "data",
            Category::Checkpoint => "checkpoint",
        }
    }
}

struct CliError {
    category: Category,
    source: anyhow::Error,
}

impl CliError {
    fn new(category: Category, source: anyhow::Error) -> Self {
        CliError { category, source }
    }
}

trait Categorize<T> {
    fn category(self, c: Category) -> Result<T, CliError>;
}

impl<T, E: Into<anyhow::Error>> Categorize<T> for Result<T, E> {
    fn category(self, c: Category) -> Result<T, CliError> {
        self.map_err(|e| CliError::new(c, e.into()))
    }
}

/// Optional JSON config file with independent sections.
#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(default)]
struct ConfigFile {
    version: u32,
    model: Option<ModelConfig>,
    train: Option<TrainConfig>,
    datagen: Option<GenConfig>,
}

fn load_config(path: Option<&Path>) -> Result<ConfigFile, CliError> {
    let Some(path) = path else {
        return Ok(ConfigFile::default());
    };
    let data = std::fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))
        .category(Category::Io)?;
    let cfg: ConfigFile = serde_json::from_str(&data)
        .with_context(|| format!("parsing config {}", path.display()))
        .category(Category::Config)?;
    if cfg.version > 1 {
        return Err(CliError::new(
            Category::Config,
            anyhow::anyhow!("unsupported config version {}", cfg.version),
        ));
    }
    Ok(cfg)
}

fn resolve_out(out: Option<PathBuf>) -> Result<PathBuf, CliError> {
    out.or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from)).ok_or_else(|| {
        CliError::new(
            Category::Config,
            anyhow::anyhow!("no output directory: pass --out or set {OUT_ENV}"),
        )
    })
}

fn parse_split(s: &str) -> Result<Split, CliError> {
    Split::from_str(s).map_err(|e| CliError::new(Category::Config, anyhow::anyhow!(e)))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Datagen(args) => cmd_datagen(args),
        Command::Ingest(args) => cmd_ingest(args),
        Command::Train(args) => cmd_train(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::Probe(args) => cmd_probe(args),
        Command::Replay(args) => cmd_replay(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: category={} {:#}", e.category.name(), e.source);
            ExitCode::from(e.category.code())
        }
    }
}

// ---- datagen ----

#[derive(Debug, Serialize, Deserialize)]
struct DatagenRun {
    gen: GenConfig,
}

fn cmd_datagen(args: DatagenArgs) -> Result<(), CliError> {
    let cfg = load_config(args.config.as_deref())?;
    let mut gen = cfg.datagen.unwrap_or_default();
    if let Some(seed) = args.seed {
        gen.seed = seed;
    }
    let out = resolve_out(args.out)?;
    run_datagen(&DatagenRun { gen }, &out)
}

fn run_datagen(run: &DatagenRun, out: &Path) -> Result<(), CliError> {
    let builder = manifest::ManifestBuilder::new(
        "datagen",
        serde_json::to_value(run).expect("args serialize"),
    )
    .seed(run.gen.seed);
    let corpus = generate_corpus(&run.gen).category(Category::Config)?;
    corpus.save(out).category(Category::Io)?;
    builder.write(out).category(Category::Io)?;
    let stats = corpus.stats();
    println!(
        "wrote {} examples over {} schemas to {}",
        stats.examples,
        corpus.schemas.len(),
        out.display()
    );
    Ok(())
}

// ---- ingest ----

#[derive(Debug, Serialize, Deserialize)]
struct IngestRun {
    tables: PathBuf,
    data: PathBuf,
    split: Split,
}

fn cmd_ingest(args: IngestArgs) -> Result<(), CliError> {
    let split = parse_split(&args.split)?;
    let out = resolve_out(args.out)?;
    run_ingest(&IngestRun { tables: args.tables, data: args.data, split }, &out)
}

fn run_ingest(run: &IngestRun, out: &Path) -> Result<(), CliError> {
    let builder = manifest::ManifestBuilder::new(
        "ingest",
        serde_json::to_value(run).expect("args serialize"),
    )
    .input(&run.tables)
    .input(&run.data);
    let (corpus, report) =
        ingest_wikisql(&run.tables, &run.data, run.split).category(Category::Data)?;
    corpus.save(out).category(Category::Io)?;
    let report_path = out.join("ingest_report.json");
    let body = serde_json::json!({
        "converted": report.converted,
        "skipped": report.skipped.iter().map(|(line, reason)| {
            serde_json::json!({"line": line, "reason": reason})
        }).collect::<Vec<_>>(),
    });
    std::fs::write(&report_path, serde_json::to_string_pretty(&body).unwrap())
        .with_context(|| format!("writing {}", report_path.display()))
        .category(Category::Io)?;
    builder.write(out).category(Category::Io)?;
    println!(
        "converted {} records ({} skipped) into {}",
        report.converted,
        report.skipped.len(),
        out.display()
    );
    Ok(())
}

// ---- train ----

#[derive(Debug, Serialize, Deserialize)]
struct TrainRun {
    corpus: PathBuf,
    model: ModelConfig,
    train: TrainConfig,
}

fn cmd_train(args: TrainArgs) -> Result<(), CliError> {
    let cfg = load_config(args.config.as_deref())?;
    let model = cfg.model.unwrap_or_default();
    let mut train = cfg.train.unwrap_or_default();
    if let Some(seed) = args.seed {
        train.seed = seed;
    }
    if let Some(ablation) = &args.ablation {
        train.ablation = Ablation::from_str(ablation)
            .map_err(|e| CliError::new(Category::Config, anyhow::anyhow!(e)))?;
    }
    if let Some(threads) = args.threads {
        train.threads = threads;
    }
    let out = resolve_out(args.out)?;
    run_train(&TrainRun { corpus: args.corpus, model, train }, &out)
}

fn run_train(run: &TrainRun, out: &Path) -> Result<(), CliError> {
    let builder = manifest::ManifestBuilder::new(
        "train",
        serde_json::to_value(run).expect("args serialize"),
    )
    .seed(run.train.seed)
    .input(&run.corpus);
    let corpus = Corpus::load(&run.corpus).category(Category::Data)?;
    let report = fit(&corpus, &run.model, &run.train, out).map_err(|e| {
        let category = match &e {
            semanchor::training::TrainError::Config(_) => Category::Config,
            semanchor::training::TrainError::Io { .. } => Category::Io,
            _ => Category::Data,
        };
        CliError::new(category, e.into())
    })?;
    builder.write(out).category(Category::Io)?;
    println!(
        "trained {} for {} epochs; best dev exec acc {} (epoch {}); checkpoint {}",
        run.train.ablation.name(),
        run.train.epochs,
        report
            .best_dev_exec_acc
            .map(|a| format!("{a:.4}"))
            .unwrap_or_else(|| "n/a".into()),
        report.best_epoch,
        report.checkpoint_path.display()
    );
    Ok(())
}

// ---- evaluate ----

#[derive(Debug, Serialize, Deserialize)]
struct EvaluateRun {
    checkpoint: PathBuf,
    corpus: PathBuf,
    split: Split,
    beam: Option<usize>,
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<(), CliError> {
    let split = parse_split(&args.split)?;
    let out = resolve_out(args.out)?;
    run_evaluate(
        &EvaluateRun {
            checkpoint: args.checkpoint,
            corpus: args.corpus,
            split,
            beam: args.beam,
        },
        &out,
    )
}

fn run_evaluate(run: &EvaluateRun, out: &Path) -> Result<(), CliError> {
    let builder = manifest::ManifestBuilder::new(
        "evaluate",
        serde_json::to_value(run).expect("args serialize"),
    )
    .input(&run.checkpoint)
    .input(&run.corpus);
    let (model, _) = checkpoint::load(&run.checkpoint).category(Category::Checkpoint)?;
    let corpus = Corpus::load(&run.corpus).category(Category::Data)?;
    let examples: Vec<&semanchor::corpus::Example> = corpus.split(run.split).collect();
    if examples.is_empty() {
        return Err(CliError::new(
            Category::Data,
            anyhow::anyhow!("split {} is empty", run.split),
        ));
    }
    let mode = match run.beam {
        Some(b) if b > 1 => DecodeMode::Beam(b),
        _ => DecodeMode::Greedy,
    };
    let (report, predictions) =
        analysis::evaluate_model(&model, &corpus, &examples, mode).category(Category::Data)?;

    std::fs::create_dir_all(out)
        .with_context(|| format!("creating {}", out.display()))
        .category(Category::Io)?;
    let report_path = out.join("eval_report.json");
    std::fs::write(&report_path, serde_json::to_string_pretty(&report).unwrap())
        .with_context(|| format!("writing {}", report_path.display()))
        .category(Category::Io)?;
    let preds_path = out.join("predictions.jsonl");
    let mut lines = String::new();
    for (ex, pred) in examples.iter().zip(&predictions) {
        lines.push_str(
            &serde_json::json!({"id": ex.id, "prediction": pred.text()}).to_string(),
        );
        lines.push('\n');
    }
    std::fs::write(&preds_path, lines)
        .with_context(|| format!("writing {}", preds_path.display()))
        .category(Category::Io)?;
    builder.write(out).category(Category::Io)?;
    println!(
        "split={} examples={} exec_acc={:.4} exact={:.4} parse_failures={} halluc_strict={} halluc_anchor={}",
        run.split,
        report.examples,
        report.execution_accuracy,
        report.exact_match_rate,
        report.parse_failures,
        report.hallucinations_strict,
        report.hallucinations_anchor_mismatch
    );
    Ok(())
}

// ---- probe ----

#[derive(Debug, Serialize, Deserialize)]
struct ProbeRun {
    checkpoint: PathBuf,
    corpus: PathBuf,
    example_id: String,
    emit_plot_data: bool,
}

fn cmd_probe(args: ProbeArgs) -> Result<(), CliError> {
    let out = resolve_out(args.out)?;
    run_probe(
        &ProbeRun {
            checkpoint: args.checkpoint,
            corpus: args.corpus,
            example_id: args.example_id,
            emit_plot_data: args.emit_plot_data,
        },
        &out,
    )
}

fn run_probe(run: &ProbeRun, out: &Path) -> Result<(), CliError> {
    let builder = manifest::ManifestBuilder::new(
        "probe",
        serde_json::to_value(run).expect("args serialize"),
    )
    .input(&run.checkpoint)
    .input(&run.corpus);
    let (model, ablation) = checkpoint::load(&run.checkpoint).category(Category::Checkpoint)?;
    let corpus = Corpus::load(&run.corpus).category(Category::Data)?;
    let example = corpus
        .examples
        .iter()
        .find(|e| e.id == run.example_id)
        .ok_or_else(|| {
            CliError::new(
                Category::Data,
                anyhow::anyhow!("example {} not found in corpus", run.example_id),
            )
        })?;

    std::fs::create_dir_all(out)
        .with_context(|| format!("creating {}", out.display()))
        .category(Category::Io)?;

    let mut text = String::new();
    match analysis::weight_distribution_report(&model) {
        Some(report) => {
            text.push_str(&report.render());
            let json_path = out.join("weight_distribution.json");
            std::fs::write(&json_path, serde_json::to_string_pretty(&report).unwrap())
                .with_context(|| format!("writing {}", json_path.display()))
                .category(Category::Io)?;
            if run.emit_plot_data {
                let mut csv = String::from("task,layer,weight\n");
                for t in &report.tasks {
                    for (i, w) in t.weights.iter().enumerate() {
                        csv.push_str(&format!("{},{},{w}\n", t.task, i + 1));
                    }
                }
                let csv_path = out.join("weight_distribution.csv");
                std::fs::write(&csv_path, csv)
                    .with_context(|| format!("writing {}", csv_path.display()))
                    .category(Category::Io)?;
            }
        }
        None => {
            text.push_str(&format!(
                "weight distribution: not applicable (checkpoint ablation {})\n",
                ablation.name()
            ));
        }
    }

    text.push_str(&format!("\nexample {}\n", example.id));
    text.push_str(&format!("  utterance: {}\n", example.utterance.text()));
    text.push_str(&format!("  main:      {}\n", example.main.text()));
    let decodings = analysis::decode_intermediate_layers(&model, example)
        .category(Category::Data)?;
    let decode_path = out.join("intermediate_decodings.jsonl");
    let mut lines = String::new();
    for d in &decodings {
        text.push_str(&format!("  {}@layer{}: {}\n", d.task, d.layer, d.tokens.text()));
        lines.push_str(
            &serde_json::json!({"task": d.task, "layer": d.layer, "tokens": d.tokens.0})
                .to_string(),
        );
        lines.push('\n');
    }
    std::fs::write(&decode_path, lines)
        .with_context(|| format!("writing {}", decode_path.display()))
        .category(Category::Io)?;
    builder.write(out).category(Category::Io)?;
    print!("{text}");
    Ok(())
}

// ---- replay ----

fn cmd_replay(args: ReplayArgs) -> Result<(), CliError> {
    let manifest = manifest::read(&args.manifest).category(Category::Data)?;
    let out = resolve_out(args.out)?;
    let args_value = manifest.args.clone();
    match manifest.subcommand.as_str() {
        "datagen" => {
            let run: DatagenRun =
                serde_json::from_value(args_value).category(Category::Data)?;
            run_datagen(&run, &out)
        }
        "ingest" => {
            let run: IngestRun = serde_json::from_value(args_value).category(Category::Data)?;
            run_ingest(&run, &out)
        }
        "train" => {
            let run: TrainRun = serde_json::from_value(args_value).category(Category::Data)?;
            run_train(&run, &out)
        }
        "evaluate" => {
            let run: EvaluateRun =
                serde_json::from_value(args_value).category(Category::Data)?;
            run_evaluate(&run, &out)
        }
        "probe" => {
            let run: ProbeRun = serde_json::from_value(args_value).category(Category::Data)?;
            run_probe(&run, &out)
        }
        other => Err(CliError::new(
            Category::Data,
            anyhow::anyhow!("manifest subcommand {other:?} is not replayable"),
        )),
    }
}
