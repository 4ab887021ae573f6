//! `clickbait`: train, evaluate, predict with and gradient-check the hybrid
//! clickbait classifier.

use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use clickbait_core::gradcheck::run_suite;
use clickbait_core::io::{
    load_checkpoint, parse_corpus, read_embedding_file, read_feature_bank, save_checkpoint, Corpus,
    PostRecord,
};
use clickbait_core::metrics::compute_metrics;
use clickbait_core::model::{ModelConfig, Tables};
use clickbait_core::tensor::{inject_fault, Fault};
use clickbait_core::training::{predict_all, train, TrainConfig};

#[derive(Parser)]
#[command(name = "clickbait", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write `model.ckpt` and `trace.json` to --out.
    Train(TrainArgs),
    /// Score a labelled corpus with a checkpoint.
    Evaluate(EvalArgs),
    /// Write `id<TAB>probability` per record, in input order.
    Predict(PredictArgs),
    /// Run the finite-difference gradient checks; exit 1 on any failure.
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
struct DataArgs {
    /// JSONL corpus.
    #[arg(long)]
    corpus: PathBuf,
    /// EMB1 word embedding table.
    #[arg(long)]
    word_emb: PathBuf,
    /// EMB1 document embedding table keyed by `<id>/title` and
    /// `<id>/description`.
    #[arg(long)]
    doc_emb: PathBuf,
    /// FTB1 image feature bank; without it every post counts as imageless.
    #[arg(long)]
    image_bank: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Checkpoint path; defaults to `<out>/model.ckpt`.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 256)]
    batch_size: usize,
    /// Maximum number of epochs.
    #[arg(long, default_value_t = 100)]
    epochs: usize,
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
    /// Title length cap; defaults to the longest training title.
    #[arg(long)]
    max_title_len: Option<usize>,
    /// Epochs without validation-F1 improvement before stopping; 0 disables.
    #[arg(long, default_value_t = 10)]
    patience: usize,
    /// Stop once an epoch's training accuracy reaches this value.
    #[arg(long)]
    target_train_accuracy: Option<f64>,
    /// JSON file with layer widths; defaults to the standard model.
    #[arg(long)]
    model_config: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Decision threshold; defaults to the one the checkpoint was trained
    /// with.
    #[arg(long)]
    threshold: Option<f64>,
    /// Also write the JSON report here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PredictArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Output file; defaults to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum FaultArg {
    TanhSign,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Test hook: corrupt a backward rule so the suite must fail.
    #[arg(long, hide = true)]
    inject_fault: Option<FaultArg>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(args) => cmd_train(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::Predict(args) => cmd_predict(args),
        Command::Gradcheck(args) => cmd_gradcheck(args),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn load_corpus(path: &Path) -> Result<Vec<PostRecord>> {
    let Corpus { records, errors } =
        parse_corpus(path).with_context(|| format!("reading corpus {}", path.display()))?;
    for e in &errors {
        log::warn!("{}: {e}", path.display());
    }
    log::info!(
        "{}: {} records, {} rejected lines",
        path.display(),
        records.len(),
        errors.len()
    );
    if records.is_empty() {
        bail!("{} holds no valid records", path.display());
    }
    Ok(records)
}

fn load_tables(data: &DataArgs, records: &[PostRecord]) -> Result<Tables> {
    let words = read_embedding_file(&data.word_emb)
        .with_context(|| format!("reading word embeddings {}", data.word_emb.display()))?;
    let docs = read_embedding_file(&data.doc_emb)
        .with_context(|| format!("reading document embeddings {}", data.doc_emb.display()))?;
    let images = match &data.image_bank {
        Some(path) => {
            let bank = read_feature_bank(path)
                .with_context(|| format!("reading image bank {}", path.display()))?;
            let missing = bank.missing_ids(records);
            if !missing.is_empty() {
                log::warn!(
                    "{} image ids absent from {} are treated as missing images: {}",
                    missing.len(),
                    path.display(),
                    missing.join(", ")
                );
            }
            Some(bank)
        }
        None => None,
    };
    Ok(Tables {
        words,
        docs,
        images,
    })
}

fn cmd_train(args: TrainArgs) -> Result<ExitCode> {
    let records = load_corpus(&args.data.corpus)?;
    let tables = load_tables(&args.data, &records)?;
    let model_config = match &args.model_config {
        Some(path) => serde_json::from_str(&fs::read_to_string(path)?)
            .with_context(|| format!("parsing model config {}", path.display()))?,
        None => ModelConfig::default(),
    };
    let config = TrainConfig {
        batch_size: args.batch_size,
        seed: args.seed,
        max_epochs: args.epochs,
        threshold: args.threshold,
        max_title_len: args.max_title_len,
        patience: (args.patience > 0).then_some(args.patience),
        target_train_accuracy: args.target_train_accuracy,
        ..TrainConfig::default()
    };
    let outcome = train(&config, &model_config, &records, &tables)?;

    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let ckpt = args
        .checkpoint
        .unwrap_or_else(|| args.out.join("model.ckpt"));
    save_checkpoint(&ckpt, &outcome.model, &config)
        .with_context(|| format!("writing {}", ckpt.display()))?;
    let trace = args.out.join("trace.json");
    fs::write(&trace, serde_json::to_string_pretty(&outcome.trace)?)?;
    let best = &outcome.trace.epochs[outcome.trace.best_epoch];
    println!(
        "trained {} epochs; kept epoch {} (val f1 {:.6}, val accuracy {:.6})",
        outcome.trace.epochs.len(),
        best.epoch,
        best.val_f1,
        best.val_accuracy
    );
    println!("checkpoint: {}", ckpt.display());
    println!("trace: {}", trace.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_evaluate(args: EvalArgs) -> Result<ExitCode> {
    let checkpoint = load_checkpoint(&args.checkpoint)
        .with_context(|| format!("loading checkpoint {}", args.checkpoint.display()))?;
    let records = load_corpus(&args.data.corpus)?;
    let labels = records
        .iter()
        .map(|r| {
            r.label
                .with_context(|| format!("record {} has no label", r.id))
        })
        .collect::<Result<Vec<u8>>>()?;
    let tables = load_tables(&args.data, &records)?;
    let probs = predict_all(&checkpoint.model, &tables, &records)?;
    let threshold = args.threshold.unwrap_or(checkpoint.train.threshold);
    let report = compute_metrics(&probs, &labels, threshold)?;
    let json = serde_json::to_string_pretty(&report.to_json())?;
    print!("{}", report.to_text());
    println!("{json}");
    if let Some(out) = &args.out {
        fs::write(out, &json).with_context(|| format!("writing {}", out.display()))?;
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_predict(args: PredictArgs) -> Result<ExitCode> {
    let checkpoint = load_checkpoint(&args.checkpoint)
        .with_context(|| format!("loading checkpoint {}", args.checkpoint.display()))?;
    let records = load_corpus(&args.data.corpus)?;
    let tables = load_tables(&args.data, &records)?;
    let probs = predict_all(&checkpoint.model, &tables, &records)?;
    let mut sink: Box<dyn Write> = match &args.out {
        Some(path) => Box::new(BufWriter::new(
            fs::File::create(path).with_context(|| format!("creating {}", path.display()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    };
    for (r, p) in records.iter().zip(&probs) {
        writeln!(sink, "{}\t{p}", r.id)?;
    }
    sink.flush()?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_gradcheck(args: GradcheckArgs) -> Result<ExitCode> {
    if let Some(FaultArg::TanhSign) = args.inject_fault {
        inject_fault(Some(Fault::TanhBackwardSign));
    }
    let report = run_suite(args.seed)?;
    print!("{}", report.render());
    if report.passed() {
        println!("gradient check passed");
        Ok(ExitCode::SUCCESS)
    } else {
        println!("gradient check FAILED");
        Ok(ExitCode::FAILURE)
    }
}
