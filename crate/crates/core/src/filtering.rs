//! Probability-threshold filtering and exact-hash deduplication.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::ImageMeta;

/// All comparisons are strict: keep iff `p_text > min_p_text`,
/// `p_watermark < max_p_watermark` and `p_unsafe < max_p_unsafe`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterThresholds {
    pub min_p_text: f64,
    pub max_p_watermark: f64,
    pub max_p_unsafe: f64,
}

impl Default for FilterThresholds {
    fn default() -> Self {
        FilterThresholds {
            min_p_text: 0.8,
            max_p_watermark: 0.8,
            max_p_unsafe: 0.5,
        }
    }
}

impl FilterThresholds {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("min_p_text", self.min_p_text),
            ("max_p_watermark", self.max_p_watermark),
            ("max_p_unsafe", self.max_p_unsafe),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::validation(format!("threshold {name} = {v} outside [0,1]")));
            }
        }
        Ok(())
    }

    /// First failed criterion, checked in the order text, watermark, unsafe.
    pub fn rejection(&self, m: &ImageMeta) -> Option<Rejection> {
        if !(m.p_text > self.min_p_text) {
            Some(Rejection::Text)
        } else if !(m.p_watermark < self.max_p_watermark) {
            Some(Rejection::Watermark)
        } else if !(m.p_unsafe < self.max_p_unsafe) {
            Some(Rejection::Unsafe)
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rejection {
    Text,
    Watermark,
    Unsafe,
}

pub fn threshold_filter<'a>(metas: &'a [ImageMeta], t: &FilterThresholds) -> Vec<&'a str> {
    metas
        .iter()
        .filter(|m| t.rejection(m).is_none())
        .map(|m| m.image_id.as_str())
        .collect()
}

/// Keeps the first record for each sha256, preserving order.
pub fn dedup(metas: &[ImageMeta]) -> Vec<&str> {
    let mut seen = HashSet::with_capacity(metas.len());
    metas
        .iter()
        .filter(|m| seen.insert(m.sha256.as_str()))
        .map(|m| m.image_id.as_str())
        .collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejectedBy {
    pub text: usize,
    #[serde(rename = "watermark")]
    pub watermark: usize,
    #[serde(rename = "unsafe")]
    pub unsafe_: usize,
}

/// `input = kept + rejected_by.text + rejected_by.watermark + rejected_by.unsafe + duplicates`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterSummary {
    pub input: usize,
    pub kept: usize,
    pub rejected_by: RejectedBy,
    pub duplicates: usize,
}

/// Threshold filter followed (optionally) by dedup over the survivors.
/// Each rejected record is attributed to its first failed criterion.
pub fn filter_pool<'a>(
    metas: &'a [ImageMeta],
    t: &FilterThresholds,
    deduplicate: bool,
) -> (Vec<&'a str>, FilterSummary) {
    let mut summary = FilterSummary {
        input: metas.len(),
        ..Default::default()
    };
    let mut seen = HashSet::new();
    let mut kept = Vec::new();
    for m in metas {
        match t.rejection(m) {
            Some(Rejection::Text) => summary.rejected_by.text += 1,
            Some(Rejection::Watermark) => summary.rejected_by.watermark += 1,
            Some(Rejection::Unsafe) => summary.rejected_by.unsafe_ += 1,
            None => {
                if deduplicate && !seen.insert(m.sha256.as_str()) {
                    summary.duplicates += 1;
                } else {
                    kept.push(m.image_id.as_str());
                }
            }
        }
    }
    summary.kept = kept.len();
    (kept, summary)
}
