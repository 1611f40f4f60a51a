//! Fixture generators shared by the benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use textrich_core::datasetgen::OcrText;
use textrich_core::ingest::{normalize_rows, EmbeddingMatrix, Engine, ImageMeta, Quad, WordBox};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

const WORDS: [&str; 16] = [
    "open", "daily", "sale", "the", "book", "cover", "menu", "coffee", "street", "exit", "by", "new", "2016", "free",
    "parking", "store",
];

pub fn sentence(rng: &mut ChaCha8Rng, max_words: usize) -> String {
    let n = rng.random_range(1..=max_words);
    (0..n)
        .map(|_| WORDS[rng.random_range(0..WORDS.len())])
        .collect::<Vec<_>>()
        .join(" ")
}

/// `(prediction, references)` pairs.
pub fn caption_batch(n: usize, seed: u64) -> Vec<(String, Vec<String>)> {
    let mut r = rng(seed);
    (0..n)
        .map(|_| {
            let refs = (0..r.random_range(1..=5)).map(|_| sentence(&mut r, 14)).collect();
            (sentence(&mut r, 14), refs)
        })
        .collect()
}

/// Unit-normalized points scattered around `blobs` axis directions.
pub fn blob_embeddings(n: usize, dim: usize, blobs: usize, seed: u64) -> EmbeddingMatrix {
    let mut r = rng(seed);
    let mut data = Vec::with_capacity(n * dim);
    for i in 0..n {
        let b = i % blobs;
        for d in 0..dim {
            data.push(if d % blobs == b { 1.0 } else { 0.0 } + r.random_range(-0.2f32..0.2));
        }
    }
    let ids = (0..n).map(|i| format!("img{i}")).collect();
    normalize_rows(&EmbeddingMatrix::new(ids, dim, data).expect("consistent shape")).expect("non-zero rows")
}

pub fn image_metas(n: usize, seed: u64) -> Vec<ImageMeta> {
    let mut r = rng(seed);
    (0..n)
        .map(|i| ImageMeta {
            image_id: format!("img{i}"),
            url: format!("https://example.org/{i}.jpg"),
            width_px: 640,
            height_px: 480,
            p_text: r.random_range(0.0..1.0),
            p_watermark: r.random_range(0.0..1.0),
            p_unsafe: r.random_range(0.0..1.0),
            sha256: format!("{:064x}", r.random_range(0..n as u64 / 2 + 1)),
        })
        .collect()
}

/// Rows of words in a few separated blocks, as on a poster.
pub fn poster_words(n: usize, seed: u64) -> Vec<WordBox> {
    let mut r = rng(seed);
    let (mut x, mut y) = (10.0f32, 10.0f32);
    (0..n)
        .map(|i| {
            let w = r.random_range(10..80) as f32;
            let word = WordBox {
                text: format!("{}{i}", WORDS[i % WORDS.len()]),
                confidence: 0.9,
                quad: Quad::from_rect(x, y, x + w, y + 18.0),
                engine: Engine::Easy,
            };
            x += w + r.random_range(4..14) as f32;
            if x > 900.0 {
                x = 10.0;
                y += if r.random_range(0..6) == 0 { 90.0 } else { 24.0 };
            }
            word
        })
        .collect()
}

pub fn ocr_texts(n: usize, seed: u64) -> Vec<OcrText> {
    let mut r = rng(seed);
    (0..n)
        .map(|i| OcrText {
            image_id: format!("img{i}"),
            text: if i % 10 == 0 {
                String::new()
            } else {
                format!("{}\n\n{}", sentence(&mut r, 8), sentence(&mut r, 8))
            },
        })
        .collect()
}
