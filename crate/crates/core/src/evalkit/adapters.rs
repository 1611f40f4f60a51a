//! Readers for the native annotation layouts of the text-VQA benchmarks.
//!
//! * TextVQA: `{"data": [{"question_id", "image_id", "question", "answers": [..]}]}`
//! * ST-VQA: `{"data": [{"question_id", "file_path", "question", "answers": [..]}]}`
//! * DocVQA: `{"data": [{"questionId", "image", "question", "answers": [..]}]}`
//! * OCR-VQA: `{"<image id>": {"questions": [..], "answers": [..], ..}}`, with
//!   answers parallel to questions; qids are `<image id>_<index>`.
//!
//! Empty answer strings are dropped. Predictions are attached separately.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::EvalRecord;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetKind {
    /// Already in `EvalRecord` JSONL.
    Records,
    TextVqa,
    StVqa,
    DocVqa,
    OcrVqa,
}

impl FromStr for DatasetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "records" | "jsonl" => Ok(DatasetKind::Records),
            "textvqa" | "text-vqa" => Ok(DatasetKind::TextVqa),
            "stvqa" | "st-vqa" => Ok(DatasetKind::StVqa),
            "docvqa" | "doc-vqa" => Ok(DatasetKind::DocVqa),
            "ocrvqa" | "ocr-vqa" => Ok(DatasetKind::OcrVqa),
            other => Err(Error::validation(format!("unknown dataset kind {other:?}"))),
        }
    }
}

impl fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DatasetKind::Records => "records",
            DatasetKind::TextVqa => "textvqa",
            DatasetKind::StVqa => "stvqa",
            DatasetKind::DocVqa => "docvqa",
            DatasetKind::OcrVqa => "ocrvqa",
        })
    }
}

fn scalar_string(v: &Value) -> Option<String> {
    match v {
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        _ => None,
    }
}

fn field<'a>(obj: &'a Value, names: &[&str]) -> Option<&'a Value> {
    names.iter().find_map(|n| obj.get(*n))
}

fn answers(v: Option<&Value>) -> Vec<String> {
    match v {
        Some(Value::Array(items)) => items
            .iter()
            .filter_map(scalar_string)
            .filter(|s| !s.trim().is_empty())
            .collect(),
        Some(other) => scalar_string(other)
            .into_iter()
            .filter(|s| !s.trim().is_empty())
            .collect(),
        None => Vec::new(),
    }
}

fn data_array(root: &Value) -> Result<&Vec<Value>> {
    root.get("data")
        .and_then(Value::as_array)
        .ok_or_else(|| Error::Format("expected a top-level \"data\" array".into()))
}

fn from_data_list(root: &Value, qid_keys: &[&str], image_keys: &[&str]) -> Result<Vec<EvalRecord>> {
    data_array(root)?
        .iter()
        .enumerate()
        .map(|(i, item)| {
            let qid = field(item, qid_keys)
                .and_then(scalar_string)
                .ok_or_else(|| Error::Format(format!("entry {i}: missing question id")))?;
            let image_id = field(item, image_keys).and_then(scalar_string).unwrap_or_default();
            let question = field(item, &["question"]).and_then(scalar_string).unwrap_or_default();
            let rec = EvalRecord {
                qid,
                image_id,
                question,
                gt_answers: answers(field(item, &["answers", "answer"])),
                prediction: String::new(),
            };
            rec.validate()?;
            Ok(rec)
        })
        .collect()
}

fn from_ocr_vqa(root: &Value) -> Result<Vec<EvalRecord>> {
    let map = root
        .as_object()
        .ok_or_else(|| Error::Format("expected an object keyed by image id".into()))?;
    let mut out = Vec::new();
    for (image_id, entry) in map {
        let questions = entry
            .get("questions")
            .and_then(Value::as_array)
            .ok_or_else(|| Error::Format(format!("{image_id}: missing questions")))?;
        let answers_list = entry
            .get("answers")
            .and_then(Value::as_array)
            .ok_or_else(|| Error::Format(format!("{image_id}: missing answers")))?;
        if questions.len() != answers_list.len() {
            return Err(Error::Format(format!(
                "{image_id}: {} questions but {} answers",
                questions.len(),
                answers_list.len()
            )));
        }
        for (j, (q, a)) in questions.iter().zip(answers_list).enumerate() {
            let rec = EvalRecord {
                qid: format!("{image_id}_{j}"),
                image_id: image_id.clone(),
                question: scalar_string(q).unwrap_or_default(),
                gt_answers: answers(Some(a)),
                prediction: String::new(),
            };
            rec.validate()?;
            out.push(rec);
        }
    }
    Ok(out)
}

/// Parses a benchmark annotation file into records with empty predictions.
/// `Records` input keeps any predictions it already carries.
pub fn load_records(kind: DatasetKind, text: &str) -> Result<Vec<EvalRecord>> {
    if kind == DatasetKind::Records {
        let recs: Vec<EvalRecord> = crate::artifact::from_jsonl(text)?;
        for r in &recs {
            r.validate()?;
        }
        return Ok(recs);
    }
    let root: Value = serde_json::from_str(text).map_err(|e| Error::parse(None, e.to_string()))?;
    match kind {
        DatasetKind::TextVqa => from_data_list(&root, &["question_id"], &["image_id"]),
        DatasetKind::StVqa => from_data_list(&root, &["question_id"], &["file_path", "image"]),
        DatasetKind::DocVqa => from_data_list(&root, &["questionId", "question_id"], &["image", "image_id"]),
        DatasetKind::OcrVqa => from_ocr_vqa(&root),
        DatasetKind::Records => unreachable!(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionLine {
    pub qid: String,
    pub prediction: String,
}

/// Fills predictions by qid. Returns how many records had none.
pub fn attach_predictions(records: &mut [EvalRecord], preds: &[PredictionLine]) -> usize {
    let by_qid: HashMap<&str, &str> = preds.iter().map(|p| (p.qid.as_str(), p.prediction.as_str())).collect();
    let mut missing = 0;
    for r in records {
        match by_qid.get(r.qid.as_str()) {
            Some(p) => r.prediction = (*p).to_string(),
            None => missing += 1,
        }
    }
    missing
}
