use std::fs;
use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use textrich_core::artifact::sha256_file;
use textrich_core::ingest::{
    ids_path, normalize_rows, parse_metadata, parse_ocr, read_embeddings, write_embeddings, EmbeddingMatrix, Engine,
};
use textrich_core::Error;

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

#[test]
fn metadata_fixture_with_one_bad_line() {
    let parsed = parse_metadata(fixture("metadata_3.jsonl")).unwrap();
    assert_eq!(parsed.records.len(), 2);
    assert_eq!(parsed.errors.len(), 1);
    assert_eq!(parsed.errors[0].line, 2);
    assert_eq!(parsed.records[1].image_id, "c");
}

#[test]
fn missing_metadata_file_is_io_error() {
    assert!(matches!(parse_metadata(fixture("nope.jsonl")), Err(Error::Io { .. })));
}

#[test]
fn paddle_fixture_drops_degenerate_quad() {
    let parsed = parse_ocr(fixture("paddle_5.json"), Engine::Paddle).unwrap();
    assert_eq!(parsed.doc.words.len(), 4);
    assert_eq!(parsed.warnings.degenerate_quad, 1);
    assert_eq!(parsed.warnings.total(), 1);
    assert_eq!(parsed.doc.image_id, "paddle_5");
    let hello = &parsed.doc.words[0];
    assert_eq!((hello.text.as_str(), hello.confidence), ("Hello", 0.98));
    let single = &parsed.doc.words[2];
    assert_eq!((single.text.as_str(), single.confidence), ("A", 1.0));
}

#[test]
fn easy_fixture_with_wrapper() {
    let parsed = parse_ocr(fixture("easy_3.json"), Engine::Easy).unwrap();
    assert_eq!(parsed.doc.image_id, "book_cover");
    assert_eq!((parsed.doc.ocr_width_px, parsed.doc.ocr_height_px), (200, 100));
    let texts: Vec<&str> = parsed.doc.words.iter().map(|w| w.text.as_str()).collect();
    assert_eq!(texts, ["SANDRA", "BOYNTON", "2016"]);
}

#[test]
fn large_matrix_round_trip_is_byte_identical() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (n, d) = (1000, 512);
    let ids: Vec<String> = (0..n).map(|i| format!("img_{i:05}")).collect();
    let data: Vec<f32> = (0..n * d).map(|_| rng.random_range(-1.0f32..1.0)).collect();
    let m = EmbeddingMatrix::new(ids, d, data).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("a.trfg");
    let second = dir.path().join("b.trfg");
    write_embeddings(&m, &first).unwrap();
    let back = read_embeddings(&first).unwrap();
    assert_eq!(back, m);
    write_embeddings(&back, &second).unwrap();
    assert_eq!(sha256_file(&first).unwrap(), sha256_file(&second).unwrap());
    assert_eq!(
        sha256_file(&ids_path(&first)).unwrap(),
        sha256_file(&ids_path(&second)).unwrap()
    );
    assert_eq!(fs::metadata(&first).unwrap().len(), 4 + 2 + 8 + 4 + (n * d * 4) as u64);
}

#[test]
fn corrupt_files_rejected() {
    let m = EmbeddingMatrix::from_rows(
        vec!["a".into(), "b".into()],
        &[vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]],
    )
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("m.trfg");
    write_embeddings(&m, &p).unwrap();
    let good = fs::read(&p).unwrap();

    let mut bad = good.clone();
    bad[..4].copy_from_slice(b"XXXX");
    fs::write(&p, &bad).unwrap();
    assert!(matches!(read_embeddings(&p), Err(Error::Format(_))));

    fs::write(&p, &good[..good.len() - 4]).unwrap();
    assert!(matches!(read_embeddings(&p), Err(Error::Truncated { .. })));

    fs::write(&p, &good).unwrap();
    fs::write(ids_path(&p), "a\na\n").unwrap();
    assert!(matches!(read_embeddings(&p), Err(Error::Validation(_))));
}

#[test]
fn normalized_rows_have_unit_norm() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let rows: Vec<Vec<f32>> = (0..10)
        .map(|_| (0..8).map(|_| rng.random_range(-5.0f32..5.0)).collect())
        .collect();
    let m = EmbeddingMatrix::from_rows((0..10).map(|i| i.to_string()).collect(), &rows).unwrap();
    let n = normalize_rows(&m).unwrap();
    for i in 0..n.len() {
        let mut s = 0.0f64;
        for v in n.row(i) {
            s += (*v as f64) * (*v as f64);
        }
        assert!((s.sqrt() - 1.0).abs() < 1e-5);
    }
}
