use std::collections::HashMap;

use futures::stream::{self, StreamExt};
use serde::{Deserialize, Serialize};
use textrich_core::artifact::{read_jsonl, to_jsonl};
use textrich_core::evalkit::{
    attach_predictions, evaluate, fontsize_plan as plan_jobs, fontsize_score as score_jobs, gen_read_eval_questions,
    judge_relative, load_records, relative_score, FontSizeJob, JudgePrompt, PredictionLine, SizedRecord,
};
use textrich_core::{EvalRecord, JudgeOutcome};

use crate::backend::{block_on, Llm, Recorder};
use crate::context::{print_json, read_text, write_file, write_json, Context, InvalidInput};
use crate::{EvalJudgeArgs, EvalVqaArgs, FontsizePlanArgs, FontsizeScoreArgs, GenReadEvalArgs};

#[derive(Deserialize)]
struct ReadEvalInput {
    image_id: String,
    #[serde(default)]
    ocr_text: String,
    #[serde(default)]
    caption: String,
}

#[derive(Serialize)]
struct ReadEvalQuestions {
    image_id: String,
    questions: Vec<String>,
}

#[derive(Serialize)]
struct ItemFailure {
    id: String,
    error: String,
}

pub fn gen_read_eval(ctx: &Context, a: GenReadEvalArgs) -> anyhow::Result<()> {
    let out = ctx.out_dir()?;
    let mut m = ctx.manifest("gen-read-eval")?;
    m.input(&a.inputs)?;
    let inputs: Vec<ReadEvalInput> = read_jsonl(&a.inputs)?;
    let llm = Llm::open(ctx, &a.llm, "gen-read-eval", out, &mut m)?;
    let recorder = Recorder::new(&llm.backend);
    let temperature = ctx.config.llm.temperatures.eval_gen;
    let model = llm.model.as_str();

    let results = block_on(
        ctx,
        stream::iter(&inputs)
            .map(|item| {
                let request_id = format!("read-{}", item.image_id);
                let recorder = &recorder;
                async move {
                    gen_read_eval_questions(recorder, &request_id, &item.ocr_text, &item.caption, model, temperature)
                        .await
                }
            })
            .buffered(ctx.config.llm.max_in_flight)
            .collect::<Vec<_>>(),
    )?;

    let mut ok = Vec::new();
    let mut failed = Vec::new();
    for (item, res) in inputs.iter().zip(results) {
        match res {
            Ok(questions) => ok.push(ReadEvalQuestions {
                image_id: item.image_id.clone(),
                questions,
            }),
            Err(e) => {
                tracing::warn!(image_id = %item.image_id, error = %e, "no questions");
                failed.push(ItemFailure {
                    id: item.image_id.clone(),
                    error: e.to_string(),
                });
            }
        }
    }
    write_file(out, "read_eval_questions.jsonl", &to_jsonl(&ok), &mut m)?;
    write_file(out, "read_eval_failures.jsonl", &to_jsonl(&failed), &mut m)?;
    llm.record(&recorder.into_entries(), &mut m)?;
    let n_questions: usize = ok.iter().map(|q| q.questions.len()).sum();
    m.param("model", model)
        .param("temperature", temperature)
        .count("images", inputs.len() as u64)
        .count("questions", n_questions as u64)
        .count("failures", failed.len() as u64);
    m.write(out)?;
    println!(
        "{n_questions} questions for {} images, {} failures",
        ok.len(),
        failed.len()
    );
    Ok(())
}

pub fn eval_vqa(ctx: &Context, a: EvalVqaArgs) -> anyhow::Result<()> {
    let tau = a.tau.unwrap_or(ctx.config.eval.tau);
    if !(0.0..=1.0).contains(&tau) {
        return Err(InvalidInput(format!("tau must lie in [0, 1], got {tau}")).into());
    }
    let out = ctx.out_dir()?;
    let mut m = ctx.manifest("eval-vqa")?;
    m.input(&a.annotations)?;
    let mut records = load_records(a.kind, &read_text(&a.annotations)?)?;
    if let Some(p) = &a.predictions {
        m.input(p)?;
        let preds: Vec<PredictionLine> = read_jsonl(p)?;
        let missing = attach_predictions(&mut records, &preds);
        if missing > 0 {
            tracing::warn!(missing, "records without a prediction are scored as empty answers");
        }
        m.count("missing_predictions", missing as u64);
    }
    let report = evaluate(&records, tau)?;
    write_json(out, "metrics.json", &report, &mut m)?;
    m.param("kind", a.kind.to_string())
        .param("tau", tau)
        .count("records", records.len() as u64);
    m.write(out)?;
    print_json(&report.aggregate)
}

#[derive(Deserialize)]
struct JudgeInput {
    qid: String,
    question: String,
    #[serde(default)]
    context: String,
    candidate: String,
    reference: String,
}

#[derive(Serialize)]
struct JudgeSummary {
    judged: usize,
    failures: usize,
    relative_score: Option<f64>,
}

pub fn eval_judge(ctx: &Context, a: EvalJudgeArgs) -> anyhow::Result<()> {
    let out = ctx.out_dir()?;
    let mut m = ctx.manifest("eval-judge")?;
    m.input(&a.inputs)?;
    let prompt = match &a.prompt {
        Some(p) => {
            m.input(p)?;
            JudgePrompt::load(p)?
        }
        None => JudgePrompt::default(),
    };
    let inputs: Vec<JudgeInput> = read_jsonl(&a.inputs)?;
    let llm = Llm::open(ctx, &a.llm, "eval-judge", out, &mut m)?;
    let recorder = Recorder::new(&llm.backend);
    let temperature = ctx.config.llm.temperatures.judge;
    let model = llm.model.as_str();

    let results = block_on(
        ctx,
        stream::iter(&inputs)
            .map(|x| {
                let (recorder, prompt) = (&recorder, &prompt);
                async move {
                    judge_relative(
                        recorder,
                        prompt,
                        &x.qid,
                        &x.question,
                        &x.context,
                        &x.candidate,
                        &x.reference,
                        model,
                        temperature,
                    )
                    .await
                }
            })
            .buffered(ctx.config.llm.max_in_flight)
            .collect::<Vec<_>>(),
    )?;

    let mut outcomes: Vec<JudgeOutcome> = Vec::new();
    let mut failed = Vec::new();
    for (x, res) in inputs.iter().zip(results) {
        match res {
            Ok(o) => outcomes.push(o),
            Err(e) => {
                tracing::warn!(qid = %x.qid, error = %e, "judge failed");
                failed.push(ItemFailure {
                    id: x.qid.clone(),
                    error: e.to_string(),
                });
            }
        }
    }
    let summary = JudgeSummary {
        judged: outcomes.len(),
        failures: failed.len(),
        relative_score: relative_score(&outcomes),
    };
    write_file(out, "judge.jsonl", &to_jsonl(&outcomes), &mut m)?;
    write_file(out, "judge_failures.jsonl", &to_jsonl(&failed), &mut m)?;
    write_json(out, "judge_summary.json", &summary, &mut m)?;
    llm.record(&recorder.into_entries(), &mut m)?;
    m.param("model", model)
        .param("temperature", temperature)
        .count("judged", outcomes.len() as u64)
        .count("failures", failed.len() as u64);
    m.write(out)?;
    print_json(&summary)
}

pub fn fontsize_plan(ctx: &Context, a: FontsizePlanArgs) -> anyhow::Result<()> {
    let out = ctx.out_dir()?;
    let mut m = ctx.manifest("fontsize-plan")?;
    m.input(&a.records)?;
    let records: Vec<SizedRecord> = read_jsonl(&a.records)?;
    for r in &records {
        r.record.validate()?;
    }
    let targets = &ctx.config.eval.font_targets;
    let plan = plan_jobs(&records, targets);
    if plan.skipped_nonpositive > 0 {
        tracing::warn!(
            skipped = plan.skipped_nonpositive,
            "records without a positive answer height"
        );
    }
    write_file(out, "fontsize_jobs.jsonl", &to_jsonl(&plan.jobs), &mut m)?;
    m.param("targets", targets)
        .count("records", records.len() as u64)
        .count("jobs", plan.jobs.len() as u64)
        .count("skipped", plan.skipped_nonpositive as u64);
    m.write(out)?;
    println!("{} jobs, {} records skipped", plan.jobs.len(), plan.skipped_nonpositive);
    Ok(())
}

#[derive(Deserialize)]
struct SizedPrediction {
    qid: String,
    target: u32,
    prediction: String,
}

pub fn fontsize_score(ctx: &Context, a: FontsizeScoreArgs) -> anyhow::Result<()> {
    let out = ctx.out_dir()?;
    let mut m = ctx.manifest("fontsize-score")?;
    m.input(&a.records)?.input(&a.jobs_file)?.input(&a.predictions)?;
    let records: Vec<EvalRecord> = read_jsonl(&a.records)?;
    for r in &records {
        r.validate()?;
    }
    let jobs: Vec<FontSizeJob> = read_jsonl(&a.jobs_file)?;
    let preds: HashMap<(String, u32), String> = read_jsonl::<SizedPrediction>(&a.predictions)?
        .into_iter()
        .map(|p| ((p.qid, p.target), p.prediction))
        .collect();
    let score = score_jobs(&preds, &records, &jobs);
    if score.missing > 0 {
        tracing::warn!(missing = score.missing, "jobs without a prediction are scored as wrong");
    }
    write_json(out, "fontsize_score.json", &score, &mut m)?;
    m.count("jobs", jobs.len() as u64)
        .count("missing", score.missing as u64);
    m.write(out)?;
    print_json(&score)
}
