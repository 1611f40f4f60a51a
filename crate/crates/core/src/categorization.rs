//! Zero-shot categorization of image embeddings against label words, with
//! prompt-template ensembling in embedding space.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{l2_norm, EmbeddingMatrix};

const BUILTIN_TAXONOMY: &str = include_str!("../data/taxonomy.json");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuperClass {
    pub name: String,
    pub words: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Taxonomy {
    pub super_classes: Vec<SuperClass>,
    pub templates: Vec<String>,
    pub other_name: String,
    /// Images whose best similarity is strictly below this go to `other_name`.
    pub threshold: f64,
}

impl Taxonomy {
    /// The eight-class taxonomy with nine prompt templates shipped in
    /// `data/taxonomy.json`.
    pub fn builtin() -> Taxonomy {
        let t: Taxonomy = serde_json::from_str(BUILTIN_TAXONOMY).expect("builtin taxonomy parses");
        t.validate().expect("builtin taxonomy is valid");
        t
    }

    pub fn load(path: &Path) -> Result<Taxonomy> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let t: Taxonomy = serde_json::from_str(&text).map_err(|e| Error::parse(Some(e.line()), e.to_string()))?;
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for sc in &self.super_classes {
            for w in &sc.words {
                if !seen.insert(w.as_str()) {
                    return Err(Error::validation(format!(
                        "label word {w:?} maps to more than one super-class"
                    )));
                }
            }
        }
        for t in &self.templates {
            if t.matches("{}").count() != 1 {
                return Err(Error::validation(format!(
                    "template {t:?} must contain exactly one {{}} placeholder"
                )));
            }
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::validation("threshold must lie in [0,1]"));
        }
        Ok(())
    }

    /// Label words in taxonomy order, paired with their super-class index.
    pub fn words(&self) -> impl Iterator<Item = (usize, &str)> {
        self.super_classes
            .iter()
            .enumerate()
            .flat_map(|(i, sc)| sc.words.iter().map(move |w| (i, w.as_str())))
    }

    pub fn word_count(&self) -> usize {
        self.super_classes.iter().map(|s| s.words.len()).sum()
    }
}

/// Id used for a (word, template) prompt in the prompt embedding file.
pub fn prompt_id(word: &str, template_index: usize) -> String {
    format!("{word}#{template_index}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptEntry {
    pub id: String,
    pub word: String,
    pub template_index: usize,
    pub prompt: String,
}

/// Every (word, template) prompt, word-major in taxonomy order.
pub fn expand_prompts(t: &Taxonomy) -> Result<Vec<PromptEntry>> {
    for tpl in &t.templates {
        if !tpl.contains("{}") {
            return Err(Error::validation(format!("template {tpl:?} has no {{}} placeholder")));
        }
    }
    Ok(t.words()
        .flat_map(|(_, word)| {
            t.templates.iter().enumerate().map(move |(j, tpl)| PromptEntry {
                id: prompt_id(word, j),
                word: word.to_string(),
                template_index: j,
                prompt: tpl.replacen("{}", word, 1),
            })
        })
        .collect())
}

/// One unit-norm row per label word, in taxonomy order.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelBank {
    pub words: Vec<String>,
    /// Super-class index for each word.
    pub classes: Vec<usize>,
    pub dim: usize,
    pub embeddings: Vec<f32>,
}

impl LabelBank {
    pub fn row(&self, i: usize) -> &[f32] {
        &self.embeddings[i * self.dim..(i + 1) * self.dim]
    }
}

/// For each word: normalize each template embedding, average, re-normalize.
pub fn build_label_bank(t: &Taxonomy, prompt_embeddings: &EmbeddingMatrix) -> Result<LabelBank> {
    let index: HashMap<&str, usize> = prompt_embeddings
        .ids()
        .iter()
        .enumerate()
        .map(|(i, id)| (id.as_str(), i))
        .collect();
    let dim = prompt_embeddings.dim();
    let mut words = Vec::new();
    let mut classes = Vec::new();
    let mut embeddings = Vec::with_capacity(t.word_count() * dim);
    for (class, word) in t.words() {
        let mut mean = vec![0.0f64; dim];
        for (j, tpl) in t.templates.iter().enumerate() {
            let id = prompt_id(word, j);
            let &row_idx = index
                .get(id.as_str())
                .ok_or_else(|| Error::validation(format!("missing prompt embedding for ({word:?}, {tpl:?})")))?;
            let row = prompt_embeddings.row(row_idx);
            let norm = l2_norm(row);
            if norm == 0.0 || !norm.is_finite() {
                return Err(Error::validation(format!(
                    "prompt embedding for ({word:?}, {tpl:?}) has zero norm"
                )));
            }
            for (m, &v) in mean.iter_mut().zip(row) {
                *m += v as f64 / norm;
            }
        }
        let count = t.templates.len() as f64;
        mean.iter_mut().for_each(|m| *m /= count);
        let norm = mean.iter().map(|v| v * v).sum::<f64>().sqrt();
        // relative cutoff: cancelling template vectors leave only rounding noise
        if !(norm > 1e-6) {
            return Err(Error::validation(format!(
                "template embeddings for {word:?} average to zero"
            )));
        }
        embeddings.extend(mean.iter().map(|v| (v / norm) as f32));
        words.push(word.to_string());
        classes.push(class);
    }
    Ok(LabelBank {
        words,
        classes,
        dim,
        embeddings,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Category {
    pub super_class: String,
    /// Best-matching label word, absent when the image falls to "Other".
    pub word: Option<String>,
    pub similarity: f32,
}

/// Dot-product similarity against every bank row; the argmax word wins
/// (earliest word on ties) unless the best similarity is below the threshold.
pub fn classify(image_emb: &[f32], bank: &LabelBank, t: &Taxonomy) -> Result<Category> {
    if image_emb.len() != bank.dim {
        return Err(Error::validation(format!(
            "image embedding dim {} != label bank dim {}",
            image_emb.len(),
            bank.dim
        )));
    }
    let mut best: Option<(usize, f32)> = None;
    for i in 0..bank.words.len() {
        let sim = image_emb
            .iter()
            .zip(bank.row(i))
            .map(|(&a, &b)| a as f64 * b as f64)
            .sum::<f64>() as f32;
        if best.is_none_or(|(_, b)| sim > b) {
            best = Some((i, sim));
        }
    }
    let Some((i, sim)) = best else {
        return Ok(Category {
            super_class: t.other_name.clone(),
            word: None,
            similarity: f32::NEG_INFINITY,
        });
    };
    if sim < t.threshold as f32 {
        return Ok(Category {
            super_class: t.other_name.clone(),
            word: None,
            similarity: sim,
        });
    }
    Ok(Category {
        super_class: t.super_classes[bank.classes[i]].name.clone(),
        word: Some(bank.words[i].clone()),
        similarity: sim,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryRecord {
    pub image_id: String,
    pub super_class: String,
    pub word: Option<String>,
    pub similarity: f32,
}

/// Normalizes image rows, then classifies each one.
pub fn classify_all(images: &EmbeddingMatrix, bank: &LabelBank, t: &Taxonomy) -> Result<Vec<CategoryRecord>> {
    let images = crate::ingest::normalize_rows(images)?;
    images
        .rows()
        .map(|(id, row)| {
            let c = classify(row, bank, t)?;
            Ok(CategoryRecord {
                image_id: id.to_string(),
                super_class: c.super_class,
                word: c.word,
                similarity: c.similarity,
            })
        })
        .collect()
}

/// Count per super-class (plus "Other"), every class present even if zero.
pub fn histogram(records: &[CategoryRecord], t: &Taxonomy) -> BTreeMap<String, usize> {
    let mut h: BTreeMap<String, usize> = t.super_classes.iter().map(|s| (s.name.clone(), 0)).collect();
    h.insert(t.other_name.clone(), 0);
    for r in records {
        *h.entry(r.super_class.clone()).or_default() += 1;
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(dim: usize, axis: usize) -> Vec<f32> {
        let mut v = vec![0.0; dim];
        v[axis] = 1.0;
        v
    }

    /// Prompt embeddings where every template of word i points along axis i.
    fn axis_prompts(t: &Taxonomy) -> EmbeddingMatrix {
        let dim = t.word_count();
        let mut ids = Vec::new();
        let mut rows = Vec::new();
        for (i, (_, w)) in t.words().enumerate() {
            for j in 0..t.templates.len() {
                ids.push(prompt_id(w, j));
                rows.push(unit(dim, i));
            }
        }
        EmbeddingMatrix::from_rows(ids, &rows).unwrap()
    }

    #[test]
    fn builtin_taxonomy_shape() {
        let t = Taxonomy::builtin();
        assert_eq!(t.super_classes.len(), 8);
        assert_eq!(t.templates.len(), 9);
        assert_eq!(t.word_count(), 23);
        assert_eq!(t.threshold, 0.15);
        assert_eq!(t.other_name, "Other");
    }

    #[test]
    fn template_substitution() {
        let t = Taxonomy::builtin();
        let prompts = expand_prompts(&t).unwrap();
        let logo = prompts
            .iter()
            .find(|p| p.word == "logo" && p.template_index == 0)
            .unwrap();
        assert_eq!(logo.prompt, "a photo of a logo.");
        assert_eq!(prompts.len(), 23 * 9);
    }

    #[test]
    fn prompt_count_is_words_times_templates() {
        let mut t = Taxonomy::builtin();
        t.super_classes = vec![SuperClass {
            name: "X".into(),
            words: (0..26).map(|i| format!("w{i}")).collect(),
        }];
        assert_eq!(expand_prompts(&t).unwrap().len(), 234);
        t.super_classes[0].words.clear();
        assert!(expand_prompts(&t).unwrap().is_empty());
    }

    #[test]
    fn template_without_placeholder_rejected() {
        let mut t = Taxonomy::builtin();
        t.templates.push("no placeholder".into());
        assert!(expand_prompts(&t).is_err());
        assert!(t.validate().is_err());
    }

    #[test]
    fn bank_of_identical_vectors() {
        let t = Taxonomy::builtin();
        let bank = build_label_bank(&t, &axis_prompts(&t)).unwrap();
        assert_eq!(bank.words.len(), 23);
        assert_eq!(bank.row(4), unit(23, 4).as_slice());
    }

    #[test]
    fn antipodal_templates_average_to_zero() {
        let t = Taxonomy {
            super_classes: vec![SuperClass {
                name: "A".into(),
                words: vec!["w".into()],
            }],
            templates: vec!["{} one".into(), "{} two".into()],
            other_name: "Other".into(),
            threshold: 0.15,
        };
        let m = EmbeddingMatrix::from_rows(
            vec![prompt_id("w", 0), prompt_id("w", 1)],
            &[vec![0.3, -0.4], vec![-0.3, 0.4]],
        )
        .unwrap();
        assert!(build_label_bank(&t, &m).is_err());
    }

    #[test]
    fn missing_prompt_named() {
        let t = Taxonomy::builtin();
        let full = axis_prompts(&t);
        let keep: HashSet<&str> = full
            .ids()
            .iter()
            .map(String::as_str)
            .filter(|id| *id != "quiz#3")
            .collect();
        let err = build_label_bank(&t, &full.select(&keep)).unwrap_err().to_string();
        assert!(err.contains("quiz") && err.contains("low contrast"), "{err}");
    }

    #[test]
    fn exact_bank_row_match() {
        let t = Taxonomy::builtin();
        let bank = build_label_bank(&t, &axis_prompts(&t)).unwrap();
        let idx = bank.words.iter().position(|w| w == "movie poster").unwrap();
        let c = classify(bank.row(idx), &bank, &t).unwrap();
        assert_eq!(c.super_class, "Poster");
        assert_eq!(c.word.as_deref(), Some("movie poster"));
        assert_eq!(c.similarity, 1.0);
    }

    #[test]
    fn low_similarity_is_other() {
        let t = Taxonomy::builtin();
        let bank = build_label_bank(&t, &axis_prompts(&t)).unwrap();
        // similarity 0.1 with every word
        let mut img = vec![0.1f32; 23];
        img.push((1.0f64 - 23.0 * 0.01).sqrt() as f32);
        let bank24 = LabelBank {
            dim: 24,
            embeddings: bank
                .embeddings
                .chunks(23)
                .flat_map(|r| r.iter().copied().chain(std::iter::once(0.0)))
                .collect(),
            ..bank
        };
        let c = classify(&img, &bank24, &t).unwrap();
        assert_eq!(c.super_class, "Other");
        assert!(c.word.is_none());
        assert!((c.similarity - 0.1).abs() < 1e-6);
    }

    #[test]
    fn threshold_boundary_is_inclusive() {
        let t = Taxonomy::builtin();
        let bank = build_label_bank(&t, &axis_prompts(&t)).unwrap();
        let mut img = vec![0.0f32; 23];
        img[0] = 0.15;
        let c = classify(&img, &bank, &t).unwrap();
        assert_eq!(c.similarity, 0.15f32);
        assert_eq!(c.super_class, "Quote & Meme");
    }

    #[test]
    fn ties_go_to_first_word() {
        let t = Taxonomy::builtin();
        let bank = build_label_bank(&t, &axis_prompts(&t)).unwrap();
        let mut img = vec![0.0f32; 23];
        img[3] = 0.5;
        img[22] = 0.5;
        let c = classify(&img, &bank, &t).unwrap();
        assert_eq!(c.word.as_deref(), Some(bank.words[3].as_str()));
    }

    #[test]
    fn dim_mismatch() {
        let t = Taxonomy::builtin();
        let bank = build_label_bank(&t, &axis_prompts(&t)).unwrap();
        assert!(classify(&[1.0, 0.0], &bank, &t).is_err());
    }
}
