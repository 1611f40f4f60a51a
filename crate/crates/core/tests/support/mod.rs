//! Fixture generators and property checks shared by integration tests.
#![allow(dead_code)]

pub mod llm_scenarios;
pub mod mock;

use rand::Rng;
use textrich_core::ingest::{Engine, Quad, WordBox};
use textrich_core::textlayout::{merge_words, LayoutParams, Paragraph};

/// Random words with integer coordinates, loosely arranged in text-like rows
/// so that lines and paragraphs actually form.
pub fn random_layout<R: Rng>(rng: &mut R, max_words: usize) -> Vec<WordBox> {
    let n = rng.random_range(1..=max_words);
    let mut words = Vec::with_capacity(n);
    let mut x = rng.random_range(0..40) as f32;
    let mut y = rng.random_range(0..40) as f32;
    let line_h = rng.random_range(8..24) as f32;
    for i in 0..n {
        let w = rng.random_range(4..60) as f32;
        let h = (line_h + rng.random_range(-3..=3) as f32).max(2.0);
        let jitter = rng.random_range(-2..=2) as f32;
        let top = (y + jitter).max(0.0);
        words.push(WordBox {
            text: format!("w{i}"),
            confidence: rng.random_range(0.0..=1.0),
            quad: Quad::from_rect(x, top, x + w, top + h),
            engine: Engine::Paddle,
        });
        x += w + rng.random_range(1..30) as f32;
        match rng.random_range(0..10) {
            0..=1 => {
                // new line in the same block
                x = rng.random_range(0..40) as f32;
                y += line_h + rng.random_range(1..8) as f32;
            }
            2 => {
                // far-away block
                x = rng.random_range(0..600) as f32;
                y += rng.random_range(60..200) as f32;
            }
            _ => {}
        }
    }
    words
}

fn transform(words: &[WordBox], f: impl Fn(&Quad) -> Quad) -> Vec<WordBox> {
    words
        .iter()
        .map(|w| WordBox {
            quad: f(&w.quad),
            ..w.clone()
        })
        .collect()
}

fn shape(ps: &[Paragraph]) -> Vec<(String, usize, usize)> {
    ps.iter()
        .map(|p| (p.text.clone(), p.line_count, p.word_count))
        .collect()
}

/// Word conservation, reading order, translation and uniform-scale
/// invariance for one layout. Returns a description of the first violation.
pub fn check_layout(words: &[WordBox], dx: f32, dy: f32, scale: f32) -> Result<(), String> {
    let p = LayoutParams::default();
    let paras = merge_words(words, &p);

    let total: usize = paras.iter().map(|p| p.word_count).sum();
    if total != words.len() {
        return Err(format!("word count {total} != {}", words.len()));
    }
    let mut got: Vec<&str> = paras.iter().flat_map(|p| p.text.split_whitespace()).collect();
    let mut want: Vec<&str> = words.iter().map(|w| w.text.as_str()).collect();
    got.sort_unstable();
    want.sort_unstable();
    if got != want {
        return Err("words not conserved".into());
    }

    for pair in paras.windows(2) {
        let (a, b) = (&pair[0].bbox, &pair[1].bbox);
        if (a.top, a.left) > (b.top, b.left) {
            return Err(format!("paragraphs out of order: {a:?} before {b:?}"));
        }
    }

    let moved = merge_words(&transform(words, |q| q.translated(dx, dy)), &p);
    if shape(&moved) != shape(&paras) {
        return Err(format!("translation by ({dx}, {dy}) changed grouping"));
    }
    for (m, o) in moved.iter().zip(&paras) {
        if m.bbox.left != o.bbox.left + dx as f64 || m.bbox.top != o.bbox.top + dy as f64 {
            return Err("translated bbox mismatch".into());
        }
    }

    let scaled = merge_words(&transform(words, |q| q.scaled(scale, scale)), &p);
    if shape(&scaled) != shape(&paras) {
        return Err(format!("scaling by {scale} changed grouping"));
    }
    Ok(())
}
