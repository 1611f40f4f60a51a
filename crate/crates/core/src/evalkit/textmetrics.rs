use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const ROUGE_BETA: f64 = 1.2;
const CIDER_MAX_N: usize = 4;
const CIDER_SIGMA: f64 = 6.0;

/// Lowercased whitespace tokens.
pub fn tokens(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_lowercase).collect()
}

fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    for x in a {
        let mut cur = vec![0usize; b.len() + 1];
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { prev[j + 1].max(cur[j]) };
        }
        prev = cur;
    }
    prev[b.len()]
}

/// LCS-based F-measure, best over references.
pub fn rouge_l(pred: &str, refs: &[String]) -> f64 {
    let p = tokens(pred);
    refs.iter()
        .map(|r| {
            let r = tokens(r);
            let lcs = lcs_len(&p, &r);
            if lcs == 0 {
                return 0.0;
            }
            let prec = lcs as f64 / p.len() as f64;
            let rec = lcs as f64 / r.len() as f64;
            let b2 = ROUGE_BETA * ROUGE_BETA;
            (1.0 + b2) * prec * rec / (rec + b2 * prec)
        })
        .fold(0.0, f64::max)
}

type NgramCounts = HashMap<Vec<String>, f64>;

fn ngram_counts(toks: &[String]) -> Vec<NgramCounts> {
    (1..=CIDER_MAX_N)
        .map(|n| {
            let mut c = NgramCounts::new();
            for w in toks.windows(n) {
                *c.entry(w.to_vec()).or_default() += 1.0;
            }
            c
        })
        .collect()
}

struct TfIdf {
    vecs: Vec<HashMap<Vec<String>, f64>>,
    norms: Vec<f64>,
    len: usize,
}

fn tfidf(toks: &[String], df: &HashMap<Vec<String>, f64>, log_docs: f64) -> TfIdf {
    let counts = ngram_counts(toks);
    let mut vecs = Vec::with_capacity(CIDER_MAX_N);
    let mut norms = Vec::with_capacity(CIDER_MAX_N);
    for c in counts {
        let mut v = HashMap::with_capacity(c.len());
        let mut norm = 0.0;
        for (g, tf) in c {
            let idf = log_docs - df.get(&g).copied().unwrap_or(0.0).max(1.0).ln();
            let w = tf * idf;
            norm += w * w;
            v.insert(g, w);
        }
        vecs.push(v);
        norms.push(norm.sqrt());
    }
    TfIdf {
        vecs,
        norms,
        len: toks.len(),
    }
}

fn cider_sim(hyp: &TfIdf, reference: &TfIdf) -> f64 {
    let delta = hyp.len as f64 - reference.len as f64;
    let penalty = (-(delta * delta) / (2.0 * CIDER_SIGMA * CIDER_SIGMA)).exp();
    let mut total = 0.0;
    for n in 0..CIDER_MAX_N {
        let mut val = 0.0;
        for (g, &h) in &hyp.vecs[n] {
            if let Some(&r) = reference.vecs[n].get(g) {
                val += h.min(r) * r;
            }
        }
        if hyp.norms[n] != 0.0 && reference.norms[n] != 0.0 {
            val /= hyp.norms[n] * reference.norms[n];
        }
        total += val * penalty;
    }
    total / CIDER_MAX_N as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CiderScores {
    pub per_item: Vec<f64>,
    pub mean: f64,
}

/// CIDEr-D over `batch` of `(prediction, references)`. Document frequencies
/// come from `corpus`, one document per reference set.
pub fn cider_d<S: AsRef<str>>(batch: &[(&str, &[S])], corpus: &[&[S]]) -> Result<CiderScores> {
    if corpus.len() < 2 {
        return Err(Error::validation(format!(
            "CIDEr-D needs at least 2 corpus documents, got {}",
            corpus.len()
        )));
    }
    let mut df: HashMap<Vec<String>, f64> = HashMap::new();
    for doc in corpus {
        let mut seen: HashSet<Vec<String>> = HashSet::new();
        for r in doc.iter() {
            for c in ngram_counts(&tokens(r.as_ref())) {
                seen.extend(c.into_keys());
            }
        }
        for g in seen {
            *df.entry(g).or_default() += 1.0;
        }
    }
    let log_docs = (corpus.len() as f64).ln();
    let per_item: Vec<f64> = batch
        .iter()
        .map(|(pred, refs)| {
            if refs.is_empty() {
                return 0.0;
            }
            let hyp = tfidf(&tokens(pred), &df, log_docs);
            let sum: f64 = refs
                .iter()
                .map(|r| cider_sim(&hyp, &tfidf(&tokens(r.as_ref()), &df, log_docs)))
                .sum();
            sum / refs.len() as f64 * 10.0
        })
        .collect();
    let mean = if per_item.is_empty() {
        0.0
    } else {
        per_item.iter().sum::<f64>() / per_item.len() as f64
    };
    Ok(CiderScores { per_item, mean })
}

/// METEOR with exact unigram matching only. Alignment is greedy: each
/// prediction token, left to right, takes the earliest unused equal
/// reference token.
pub fn meteor_lite(pred: &str, reference: &str) -> f64 {
    let p = tokens(pred);
    let r = tokens(reference);
    let mut used = vec![false; r.len()];
    let mut alignment: Vec<(usize, usize)> = Vec::new();
    for (i, t) in p.iter().enumerate() {
        if let Some(j) = (0..r.len()).find(|&j| !used[j] && r[j] == *t) {
            used[j] = true;
            alignment.push((i, j));
        }
    }
    let m = alignment.len();
    if m == 0 {
        return 0.0;
    }
    let chunks = 1 + alignment
        .windows(2)
        .filter(|w| !(w[1].0 == w[0].0 + 1 && w[1].1 == w[0].1 + 1))
        .count();
    let prec = m as f64 / p.len() as f64;
    let rec = m as f64 / r.len() as f64;
    let f = 10.0 * prec * rec / (rec + 9.0 * prec);
    let penalty = 0.5 * (chunks as f64 / m as f64).powi(3);
    f * (1.0 - penalty)
}
