//! VQA scoring: containment accuracy, ANLS, partial-correct analysis,
//! caption-style text metrics, LLM-judge relative scores and the font-size
//! study.

mod adapters;
mod fontsize;
mod judge;
mod textmetrics;

pub use adapters::{attach_predictions, load_records, DatasetKind, PredictionLine};
pub use fontsize::{
    fontsize_plan, fontsize_score, FontSizeBin, FontSizeJob, FontSizePlan, FontSizeScore, SizedRecord, DEFAULT_TARGETS,
};
pub use judge::{
    gen_read_eval_questions, judge_relative, parse_judge_scores, relative_score, JudgeOutcome, JudgePrompt,
};
pub use textmetrics::{cider_d, meteor_lite, rouge_l, tokens, CiderScores, ROUGE_BETA};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_ANLS_TAU: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub qid: String,
    pub image_id: String,
    pub question: String,
    pub gt_answers: Vec<String>,
    #[serde(default)]
    pub prediction: String,
}

impl EvalRecord {
    pub fn validate(&self) -> Result<()> {
        if self.gt_answers.is_empty() {
            return Err(Error::validation(format!("{}: no ground-truth answers", self.qid)));
        }
        if self.gt_answers.iter().any(|a| a.trim().is_empty()) {
            return Err(Error::validation(format!("{}: empty ground-truth answer", self.qid)));
        }
        Ok(())
    }
}

/// Lowercase and collapse runs of whitespace to one space.
pub fn normalize(s: &str) -> String {
    s.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn contains_answer(pred: &str, gt: &str) -> bool {
    let gt = normalize(gt);
    !gt.is_empty() && normalize(pred).contains(&gt)
}

/// 1 if any ground-truth answer appears in the prediction.
pub fn contains_accuracy(r: &EvalRecord) -> u8 {
    u8::from(r.gt_answers.iter().any(|gt| contains_answer(&r.prediction, gt)))
}

/// Unit-cost edit distance over Unicode scalar values.
pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    levenshtein_chars(&a, &b)
}

fn levenshtein_chars(a: &[char], b: &[char]) -> usize {
    if a.is_empty() {
        return b.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

fn similarity_chars(a: &[char], b: &[char]) -> f64 {
    let longest = a.len().max(b.len());
    if longest == 0 {
        return 1.0;
    }
    1.0 - levenshtein_chars(a, b) as f64 / longest as f64
}

/// Normalized Levenshtein similarity on lowercased, trimmed strings, zeroed
/// below `tau`.
pub fn anls(pred: &str, gt: &str, tau: f64) -> Result<f64> {
    let g: Vec<char> = gt.trim().to_lowercase().chars().collect();
    if g.is_empty() {
        return Err(Error::validation("empty ground-truth answer"));
    }
    let p: Vec<char> = pred.trim().to_lowercase().chars().collect();
    let s = similarity_chars(&p, &g);
    Ok(if s >= tau { s } else { 0.0 })
}

/// Best ANLS over all ground-truth answers.
pub fn anls_max(pred: &str, gts: &[String], tau: f64) -> Result<f64> {
    let mut best = 0.0f64;
    for gt in gts {
        best = best.max(anls(pred, gt, tau)?);
    }
    Ok(best)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Correctness {
    Wrong,
    Partial,
    Correct,
}

/// Highest normalized similarity between `gt` and any window of `pred` of the
/// same length; the whole of `pred` is the only window when it is shorter.
pub fn best_window_similarity(pred: &str, gt: &str) -> f64 {
    let p: Vec<char> = normalize(pred).chars().collect();
    let g: Vec<char> = normalize(gt).chars().collect();
    if p.len() <= g.len() {
        return similarity_chars(&p, &g);
    }
    p.windows(g.len()).map(|w| similarity_chars(w, &g)).fold(0.0, f64::max)
}

pub fn partial_correct(pred: &str, gt: &str) -> Result<Correctness> {
    if normalize(gt).is_empty() {
        return Err(Error::validation("empty ground-truth answer"));
    }
    if contains_answer(pred, gt) {
        return Ok(Correctness::Correct);
    }
    let s = best_window_similarity(pred, gt);
    Ok(if (0.5..1.0).contains(&s) {
        Correctness::Partial
    } else {
        Correctness::Wrong
    })
}

/// Best class over all ground-truth answers.
pub fn partial_correct_any(pred: &str, gts: &[String]) -> Result<Correctness> {
    let mut best = Correctness::Wrong;
    for gt in gts {
        best = best.max(partial_correct(pred, gt)?);
    }
    Ok(best)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordScore {
    pub qid: String,
    pub accuracy: u8,
    pub anls: f64,
    pub correctness: Correctness,
    pub rouge_l: f64,
    pub cider_d: Option<f64>,
    pub meteor_lite: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub n: usize,
    /// Means in [0, 1]; the `_pct` fields are percentages.
    pub accuracy: f64,
    pub anls: f64,
    pub correct_pct: f64,
    pub partial_pct: f64,
    pub wrong_pct: f64,
    pub rouge_l: f64,
    /// Absent when fewer than two records make the IDF undefined.
    pub cider_d: Option<f64>,
    pub meteor_lite: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub per_record: Vec<RecordScore>,
    pub aggregate: Aggregate,
}

/// Scores every record. CIDEr-D uses the records' own references as corpus.
pub fn evaluate(records: &[EvalRecord], tau: f64) -> Result<MetricReport> {
    for r in records {
        r.validate()?;
    }
    let cider = if records.len() >= 2 {
        let batch: Vec<(&str, &[String])> = records
            .iter()
            .map(|r| (r.prediction.as_str(), r.gt_answers.as_slice()))
            .collect();
        let corpus: Vec<&[String]> = records.iter().map(|r| r.gt_answers.as_slice()).collect();
        Some(cider_d(&batch, &corpus)?)
    } else {
        None
    };
    let per_record = records
        .par_iter()
        .enumerate()
        .map(|(i, r)| -> Result<RecordScore> {
            Ok(RecordScore {
                qid: r.qid.clone(),
                accuracy: contains_accuracy(r),
                anls: anls_max(&r.prediction, &r.gt_answers, tau)?,
                correctness: partial_correct_any(&r.prediction, &r.gt_answers)?,
                rouge_l: rouge_l(&r.prediction, &r.gt_answers),
                cider_d: cider.as_ref().map(|c| c.per_item[i]),
                meteor_lite: r
                    .gt_answers
                    .iter()
                    .map(|g| meteor_lite(&r.prediction, g))
                    .fold(0.0, f64::max),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let n = per_record.len();
    let mean = |f: &dyn Fn(&RecordScore) -> f64| {
        if n == 0 {
            0.0
        } else {
            per_record.iter().map(f).sum::<f64>() / n as f64
        }
    };
    let pct = |c: Correctness| mean(&|s| if s.correctness == c { 100.0 } else { 0.0 });
    let aggregate = Aggregate {
        n,
        accuracy: mean(&|s| f64::from(s.accuracy)),
        anls: mean(&|s| s.anls),
        correct_pct: pct(Correctness::Correct),
        partial_pct: pct(Correctness::Partial),
        wrong_pct: pct(Correctness::Wrong),
        rouge_l: mean(&|s| s.rouge_l),
        cider_d: cider.map(|c| c.mean),
        meteor_lite: mean(&|s| s.meteor_lite),
    };
    Ok(MetricReport { per_record, aggregate })
}
