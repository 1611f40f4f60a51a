use std::collections::{BTreeMap, HashMap};
use std::ops::RangeInclusive;

use serde::{Deserialize, Serialize};

use super::{contains_accuracy, EvalRecord};

pub const DEFAULT_TARGETS: RangeInclusive<u32> = 3..=19;

/// A record plus the pixel height of its answer text in the original image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizedRecord {
    #[serde(flatten)]
    pub record: EvalRecord,
    pub answer_height_px: f64,
}

/// Resize the image by `scale` so the answer text is `target` px tall.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FontSizeJob {
    pub qid: String,
    pub image_id: String,
    pub target: u32,
    pub answer_height_px: f64,
    pub scale: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FontSizePlan {
    pub jobs: Vec<FontSizeJob>,
    pub skipped_nonpositive: usize,
}

/// One job per (record, target), record-major.
pub fn fontsize_plan(records: &[SizedRecord], targets: &[u32]) -> FontSizePlan {
    let mut plan = FontSizePlan::default();
    for r in records {
        if !(r.answer_height_px > 0.0) || !r.answer_height_px.is_finite() {
            plan.skipped_nonpositive += 1;
            continue;
        }
        for &t in targets {
            plan.jobs.push(FontSizeJob {
                qid: r.record.qid.clone(),
                image_id: r.record.image_id.clone(),
                target: t,
                answer_height_px: r.answer_height_px,
                scale: f64::from(t) / r.answer_height_px,
            });
        }
    }
    plan
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FontSizeBin {
    pub target_height_px: u32,
    pub n: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FontSizeScore {
    pub bins: Vec<FontSizeBin>,
    /// Scheduled jobs with no prediction; scored as wrong.
    pub missing: usize,
}

/// Containment accuracy per target height, bins ascending by target.
pub fn fontsize_score(
    predictions: &HashMap<(String, u32), String>,
    records: &[EvalRecord],
    jobs: &[FontSizeJob],
) -> FontSizeScore {
    let by_qid: HashMap<&str, &EvalRecord> = records.iter().map(|r| (r.qid.as_str(), r)).collect();
    let mut tally: BTreeMap<u32, (usize, usize)> = BTreeMap::new();
    let mut missing = 0;
    for job in jobs {
        let entry = tally.entry(job.target).or_default();
        entry.0 += 1;
        let Some(pred) = predictions.get(&(job.qid.clone(), job.target)) else {
            missing += 1;
            continue;
        };
        if let Some(rec) = by_qid.get(job.qid.as_str()) {
            let scored = EvalRecord {
                prediction: pred.clone(),
                ..(*rec).clone()
            };
            entry.1 += usize::from(contains_accuracy(&scored));
        }
    }
    let bins = tally
        .into_iter()
        .map(|(target, (n, hits))| FontSizeBin {
            target_height_px: target,
            n,
            accuracy: if n == 0 { 0.0 } else { hits as f64 / n as f64 },
        })
        .collect();
    FontSizeScore { bins, missing }
}
