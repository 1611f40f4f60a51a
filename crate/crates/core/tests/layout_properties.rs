mod support;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use textrich_core::ingest::{Engine, Quad, WordBox};
use textrich_core::textlayout::{concat_paragraphs, merge_words, render_text_mask, LayoutParams};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn layout_invariants(seed in any::<u64>(), dx in 0u16..500, dy in 0u16..500, scale in 1u8..=4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let words = support::random_layout(&mut rng, 40);
        if let Err(e) = support::check_layout(&words, dx as f32, dy as f32, scale as f32) {
            prop_assert!(false, "{}", e);
        }
    }

    #[test]
    fn mask_dilation_is_monotone(x in 0u16..40, y in 0u16..40, w in 1u16..20, h in 1u16..20, d in 0u32..4) {
        let q = Quad::from_rect(x as f32, y as f32, (x + w) as f32, (y + h) as f32);
        let small = render_text_mask(64, 64, &[q], d);
        let large = render_text_mask(64, 64, &[q], d + 1);
        prop_assert!(small.count_ones() <= large.count_ones());
        for yy in 0..64 {
            for xx in 0..64 {
                prop_assert!(!small.get(xx, yy) || large.get(xx, yy));
            }
        }
    }
}

fn word(text: &str, l: f32, t: f32, r: f32, b: f32) -> WordBox {
    WordBox {
        text: text.into(),
        confidence: 0.9,
        quad: Quad::from_rect(l, t, r, b),
        engine: Engine::Easy,
    }
}

#[test]
fn two_column_poster() {
    // Left column: two lines; right column far away: one line.
    let words = vec![
        word("SALE", 300.0, 10.0, 360.0, 30.0),
        word("BIG", 10.0, 10.0, 50.0, 30.0),
        word("TODAY", 55.0, 11.0, 120.0, 31.0),
        word("ONLY", 10.0, 36.0, 60.0, 56.0),
    ];
    let ps = merge_words(&words, &LayoutParams::default());
    assert_eq!(concat_paragraphs(&ps), "BIG TODAY\nONLY\n\nSALE");
}

#[test]
fn confidence_floor_drops_words() {
    let mut words = vec![word("keep", 0.0, 0.0, 10.0, 10.0), word("drop", 12.0, 0.0, 20.0, 10.0)];
    words[1].confidence = 0.1;
    let p = LayoutParams {
        min_confidence: 0.5,
        ..LayoutParams::default()
    };
    assert_eq!(concat_paragraphs(&merge_words(&words, &p)), "keep");
    assert_eq!(
        concat_paragraphs(&merge_words(&words, &LayoutParams::default())),
        "keep drop"
    );
}
