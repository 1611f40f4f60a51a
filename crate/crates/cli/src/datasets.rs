use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};
use textrich_core::artifact::{read_jsonl, to_jsonl};
use textrich_core::clustering::{Assignment, ClusterKeepList};
use textrich_core::datasetgen::{
    build_gpt4_dataset, build_noisy_dataset, dataset_stats, instruction_histogram, select_gpt4_pool, validate_jsonl,
    Gpt4Input, Gpt4Options, OcrText, WhitespaceTokens,
};
use textrich_core::Conversation;

use crate::backend::{block_on, Llm};
use crate::context::{print_json, read_text, require_seed, write_file, Context, InvalidInput, UsageError};
use crate::{BuildGpt4Args, BuildNoisyArgs, StatsArgs, ValidateArgs};

pub fn build_noisy(ctx: &Context, a: BuildNoisyArgs) -> anyhow::Result<()> {
    let seed = require_seed(a.seed, ctx.config.dataset.seed, "dataset")?;
    let out = ctx.out_dir()?;
    let mut m = ctx.manifest("build-noisy")?;
    m.input(&a.ocr_text)?;
    let items: Vec<OcrText> = read_jsonl(&a.ocr_text)?;
    let built = build_noisy_dataset(&items, seed);
    write_file(out, "noisy.jsonl", &to_jsonl(&built.conversations), &mut m)?;
    let hist = instruction_histogram(&built.conversations);
    m.seed("instruction_choice", seed)
        .param("instruction_counts", &hist)
        .count("conversations", built.conversations.len() as u64)
        .count("skipped_empty", built.skipped_empty as u64);
    m.write(out)?;
    println!(
        "{} conversations, {} images without text",
        built.conversations.len(),
        built.skipped_empty
    );
    Ok(())
}

#[derive(Deserialize)]
struct Caption {
    image_id: String,
    caption: String,
}

fn joined_inputs(a: &BuildGpt4Args, m: &mut textrich_core::artifact::RunManifest) -> anyhow::Result<Vec<Gpt4Input>> {
    if let Some(p) = &a.inputs {
        m.input(p)?;
        return Ok(read_jsonl(p)?);
    }
    let (Some(easy), Some(paddle), Some(captions)) = (&a.easy, &a.paddle, &a.captions) else {
        return Err(UsageError("pass --inputs, or all of --easy, --paddle and --captions".into()).into());
    };
    m.input(easy)?.input(paddle)?.input(captions)?;
    let easy: Vec<OcrText> = read_jsonl(easy)?;
    let paddle: HashMap<String, String> = read_jsonl::<OcrText>(paddle)?
        .into_iter()
        .map(|t| (t.image_id, t.text))
        .collect();
    let captions: HashMap<String, String> = read_jsonl::<Caption>(captions)?
        .into_iter()
        .map(|c| (c.image_id, c.caption))
        .collect();
    Ok(easy
        .into_iter()
        .map(|e| Gpt4Input {
            ocr_paddle: paddle.get(&e.image_id).cloned().unwrap_or_default(),
            caption: captions.get(&e.image_id).cloned().unwrap_or_default(),
            image_id: e.image_id,
            ocr_easy: e.text,
        })
        .collect())
}

#[derive(Serialize)]
struct Gpt4Summary {
    inputs: usize,
    conversations: usize,
    failures: usize,
}

pub fn build_gpt4(ctx: &Context, a: BuildGpt4Args) -> anyhow::Result<()> {
    let d = &ctx.config.dataset;
    let out = ctx.out_dir()?;
    let mut m = ctx.manifest("build-gpt4")?;
    let mut inputs = joined_inputs(&a, &mut m)?;

    if let Some(assign_path) = &a.assignments {
        let seed = require_seed(a.seed, d.seed, "dataset")?;
        let kl_path = a.keep_list.as_ref().expect("clap requires --keep-list");
        m.input(assign_path)?.input(kl_path)?;
        let assignments: Vec<Assignment> = read_jsonl(assign_path)?;
        let keep = ClusterKeepList::load(kl_path)?;
        let clusters = d
            .gpt4_cluster_ordinals
            .iter()
            .map(|&o| keep.by_ordinal(o))
            .collect::<Result<Vec<_>, _>>()?;
        let excluded: Vec<String> = match &a.exclude {
            Some(p) => {
                m.input(p)?;
                read_jsonl::<Conversation>(p)?.into_iter().map(|c| c.image_id).collect()
            }
            None => Vec::new(),
        };
        let exclude: HashSet<&str> = excluded.iter().map(String::as_str).collect();
        let pool = select_gpt4_pool(&assignments, &clusters, d.gpt4_per_cluster, &exclude, seed)?;
        let mut by_id: HashMap<String, Gpt4Input> = inputs.into_iter().map(|i| (i.image_id.clone(), i)).collect();
        let before = pool.len();
        inputs = pool.iter().filter_map(|id| by_id.remove(id)).collect();
        if inputs.len() < before {
            tracing::warn!(missing = before - inputs.len(), "pool images without OCR inputs");
        }
        m.seed("pool", seed)
            .param("pool_clusters", &clusters)
            .param("per_cluster", d.gpt4_per_cluster)
            .count("pool", before as u64);
    }

    let llm = Llm::open(ctx, &a.llm, "build-gpt4", out, &mut m)?;
    let opts = Gpt4Options {
        model: llm.model.clone(),
        temperature: ctx.config.llm.temperatures.train_gen,
        max_tokens: None,
        max_in_flight: ctx.config.llm.max_in_flight,
        salvage: d.salvage,
    };
    let built = block_on(ctx, build_gpt4_dataset(&inputs, &llm.backend, &opts))?;
    for f in &built.failures {
        tracing::warn!(image_id = %f.image_id, error = %f.error, "no conversation");
    }
    write_file(out, "gpt4.jsonl", &to_jsonl(&built.conversations), &mut m)?;
    write_file(out, "gpt4_failures.jsonl", &to_jsonl(&built.failures), &mut m)?;
    llm.record(&built.transcript, &mut m)?;
    m.param("model", &opts.model)
        .param("temperature", opts.temperature)
        .param("max_in_flight", opts.max_in_flight)
        .param("salvage", opts.salvage)
        .count("inputs", inputs.len() as u64)
        .count("conversations", built.conversations.len() as u64)
        .count("failures", built.failures.len() as u64);
    m.write(out)?;
    let summary = Gpt4Summary {
        inputs: inputs.len(),
        conversations: built.conversations.len(),
        failures: built.failures.len(),
    };
    print_json(&summary)?;
    if summary.conversations == 0 && summary.inputs > 0 {
        anyhow::bail!("every request failed; see gpt4_failures.jsonl");
    }
    Ok(())
}

pub fn stats(a: StatsArgs) -> anyhow::Result<()> {
    let text = read_text(&a.input)?;
    print_json(&dataset_stats(&text, &WhitespaceTokens)?)
}

pub fn validate(a: ValidateArgs) -> anyhow::Result<()> {
    let report = validate_jsonl(&read_text(&a.input)?);
    if report.errors.is_empty() {
        println!("ok");
        tracing::info!(conversations = report.conversations, "all conversations valid");
        return Ok(());
    }
    for e in &report.errors {
        eprintln!("{e}");
    }
    Err(InvalidInput(format!(
        "{} of {} conversations invalid",
        report.errors.len(),
        report.conversations
    ))
    .into())
}
