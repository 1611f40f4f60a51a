//! `textrich`: per-stage driver for the curation pipeline and the evaluation
//! toolkit. Exit codes: 0 success, 1 invalid input, 2 I/O or transport
//! failure, 64 usage error.

mod backend;
mod context;
mod datasets;
mod eval;
mod pipeline;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use textrich_core::evalkit::DatasetKind;
use textrich_core::ingest::Engine;
use tracing_subscriber::EnvFilter;

use crate::context::{exit_code, Context, UsageError};

const EXIT_USAGE: u8 = 64;

#[derive(Debug, Parser)]
#[command(
    name = "textrich",
    version,
    about = "Curate text-rich image instruction data and score text-VQA output"
)]
struct Cli {
    /// Run configuration, TOML or JSON. Omitted keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory; overrides `paths.output_dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Worker threads for data-parallel stages.
    #[arg(long, global = true)]
    jobs: Option<usize>,

    /// Repeat for more log output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Apply probability thresholds and hash dedup to image metadata.
    Filter(FilterArgs),
    /// Fit k-means on a seeded sample of the embedding pool.
    ClusterFit(ClusterFitArgs),
    /// Assign every image to its nearest centroid, optionally applying a keep-list.
    ClusterAssign(ClusterAssignArgs),
    /// Write HTML pages of sampled cluster members for manual review.
    Gallery(GalleryArgs),
    /// Zero-shot categorization against the prompt-ensembled label bank.
    Categorize(CategorizeArgs),
    /// Turn OCR words into reading-order paragraphs, optionally with text masks.
    OcrMerge(OcrMergeArgs),
    /// Build single-turn OCR-transcription conversations.
    BuildNoisy(BuildNoisyArgs),
    /// Build multi-turn conversations from LLM-generated question-answer pairs.
    BuildGpt4(BuildGpt4Args),
    /// Generate evaluation questions from OCR text and a caption.
    GenReadEval(GenReadEvalArgs),
    /// Score predictions against VQA ground truth.
    EvalVqa(EvalVqaArgs),
    /// Relative scoring of candidate answers by an LLM judge.
    EvalJudge(EvalJudgeArgs),
    /// Schedule resize jobs for the font-size study.
    FontsizePlan(FontsizePlanArgs),
    /// Containment accuracy per target text height.
    FontsizeScore(FontsizeScoreArgs),
    /// Average instruction and response lengths of a conversation file.
    Stats(StatsArgs),
    /// Check a conversation file against the schema.
    Validate(ValidateArgs),
}

/// Where LLM completions come from.
#[derive(Debug, Args)]
struct LlmArgs {
    /// Answer from a recorded transcript instead of the network.
    #[arg(long)]
    replay: Option<PathBuf>,
    /// Where to record received completions; defaults to the output directory.
    #[arg(long)]
    transcript_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct FilterArgs {
    /// Metadata JSONL; overrides `paths.metadata`.
    #[arg(long)]
    metadata: Option<PathBuf>,
    /// Keep hash duplicates.
    #[arg(long)]
    no_dedup: bool,
}

#[derive(Debug, Args)]
struct ClusterFitArgs {
    #[arg(long)]
    embeddings: Option<PathBuf>,
    /// Restrict the pool to these ids (one per line).
    #[arg(long)]
    ids: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct ClusterAssignArgs {
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    ids: Option<PathBuf>,
    /// Curated keep-list; selected ids are capped per cluster.
    #[arg(long)]
    keep_list: Option<PathBuf>,
    /// Refit k-means on the whole pool, seeded from the given model's k.
    #[arg(long)]
    refit: bool,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct GalleryArgs {
    #[arg(long)]
    assignments: PathBuf,
    /// Directory holding `<image_id>.<ext>` files.
    #[arg(long)]
    images: PathBuf,
    #[arg(long, default_value_t = 48)]
    per_cluster: usize,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct CategorizeArgs {
    /// Write the prompt list to embed and stop.
    #[arg(long)]
    emit_prompts: bool,
    /// Taxonomy JSON; the built-in one otherwise.
    #[arg(long)]
    taxonomy: Option<PathBuf>,
    /// Prompt embeddings keyed by prompt id.
    #[arg(long, required_unless_present = "emit_prompts")]
    prompt_embeddings: Option<PathBuf>,
    /// Image embeddings keyed by image id.
    #[arg(long, required_unless_present = "emit_prompts")]
    image_embeddings: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct OcrMergeArgs {
    /// Directory of per-image OCR JSON; overrides `paths.ocr_dir`.
    #[arg(long)]
    ocr_dir: Option<PathBuf>,
    /// `easy` or `paddle`.
    #[arg(long)]
    engine: Engine,
    /// Also write a PBM text mask per image into this directory.
    #[arg(long)]
    masks: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct BuildNoisyArgs {
    /// `{image_id, text}` JSONL from `ocr-merge`.
    #[arg(long)]
    ocr_text: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct BuildGpt4Args {
    /// Prepared `{image_id, ocr_easy, ocr_paddle, caption}` JSONL.
    #[arg(long, conflicts_with_all = ["easy", "paddle", "captions"])]
    inputs: Option<PathBuf>,
    /// `ocr-merge` output of the first engine.
    #[arg(long, requires_all = ["paddle", "captions"])]
    easy: Option<PathBuf>,
    /// `ocr-merge` output of the second engine.
    #[arg(long)]
    paddle: Option<PathBuf>,
    /// `{image_id, caption}` JSONL.
    #[arg(long)]
    captions: Option<PathBuf>,
    /// Select the pool from these assignments and the keep-list.
    #[arg(long, requires = "keep_list")]
    assignments: Option<PathBuf>,
    #[arg(long)]
    keep_list: Option<PathBuf>,
    /// Images already used for noisy data; excluded from the pool.
    #[arg(long)]
    exclude: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    llm: LlmArgs,
}

#[derive(Debug, Args)]
struct GenReadEvalArgs {
    /// `{image_id, ocr_text, caption}` JSONL.
    #[arg(long)]
    inputs: PathBuf,
    #[command(flatten)]
    llm: LlmArgs,
}

#[derive(Debug, Args)]
struct EvalVqaArgs {
    #[arg(long, default_value = "records")]
    kind: DatasetKind,
    /// Annotation file in the layout named by `--kind`.
    #[arg(long)]
    annotations: PathBuf,
    /// `{qid, prediction}` JSONL.
    #[arg(long)]
    predictions: Option<PathBuf>,
    #[arg(long)]
    tau: Option<f64>,
}

#[derive(Debug, Args)]
struct EvalJudgeArgs {
    /// `{qid, question, context, candidate, reference}` JSONL.
    #[arg(long)]
    inputs: PathBuf,
    /// Judge prompt JSON `{system, user}`; the built-in one otherwise.
    #[arg(long)]
    prompt: Option<PathBuf>,
    #[command(flatten)]
    llm: LlmArgs,
}

#[derive(Debug, Args)]
struct FontsizePlanArgs {
    /// Records with `answer_height_px`.
    #[arg(long)]
    records: PathBuf,
}

#[derive(Debug, Args)]
struct FontsizeScoreArgs {
    #[arg(long)]
    records: PathBuf,
    /// Output of `fontsize-plan`.
    #[arg(long)]
    jobs_file: PathBuf,
    /// `{qid, target, prediction}` JSONL.
    #[arg(long)]
    predictions: PathBuf,
}

#[derive(Debug, Args)]
struct StatsArgs {
    input: PathBuf,
}

#[derive(Debug, Args)]
struct ValidateArgs {
    input: PathBuf,
}

fn init_tracing(verbose: u8) {
    let default = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let filter = EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new(default));
    tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .init();
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(n) = cli.jobs {
        if n == 0 {
            return Err(UsageError("--jobs must be at least 1".into()).into());
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let ctx = Context::load(cli.config.as_deref(), cli.out, cli.jobs)?;
    match cli.command {
        Command::Filter(a) => pipeline::filter(&ctx, a),
        Command::ClusterFit(a) => pipeline::cluster_fit(&ctx, a),
        Command::ClusterAssign(a) => pipeline::cluster_assign(&ctx, a),
        Command::Gallery(a) => pipeline::gallery(&ctx, a),
        Command::Categorize(a) => pipeline::categorize(&ctx, a),
        Command::OcrMerge(a) => pipeline::ocr_merge(&ctx, a),
        Command::BuildNoisy(a) => datasets::build_noisy(&ctx, a),
        Command::BuildGpt4(a) => datasets::build_gpt4(&ctx, a),
        Command::Stats(a) => datasets::stats(a),
        Command::Validate(a) => datasets::validate(a),
        Command::GenReadEval(a) => eval::gen_read_eval(&ctx, a),
        Command::EvalVqa(a) => eval::eval_vqa(&ctx, a),
        Command::EvalJudge(a) => eval::eval_judge(&ctx, a),
        Command::FontsizePlan(a) => eval::fontsize_plan(&ctx, a),
        Command::FontsizeScore(a) => eval::fontsize_score(&ctx, a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    init_tracing(cli.verbose);
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
