use proptest::prelude::*;

use super::*;
use crate::fixtures::{cat, num, text};
use crate::rdb::Value;
use crate::synthesis::{FeatureColumn, FeatureSource, FeatureTable};

fn fcol(name: &str, kind: FeatureKind) -> FeatureColumn {
    FeatureColumn {
        name: name.into(),
        kind,
        source: FeatureSource::Original { column: 0 },
    }
}

fn plain(v: Value) -> FeatureValue {
    FeatureValue::Plain(v)
}

fn freq(pairs: &[(&str, u64)]) -> FeatureValue {
    FeatureValue::Freq(pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect())
}

fn table(columns: Vec<FeatureColumn>, rows: Vec<Vec<FeatureValue>>) -> FeatureTable {
    FeatureTable { target_table: 0, columns, rows }
}

#[test]
fn zscore_uses_train_rows_only() {
    let t = table(
        vec![fcol("x", FeatureKind::Numeric)],
        vec![
            vec![plain(num(2.0))],
            vec![plain(num(4.0))],
            vec![plain(Value::Missing)],
            vec![plain(num(1000.0))], // not in the train split
        ],
    );
    let specs = fit_encoders(&t, &[0, 1], &EncodingConfig::default());
    assert_eq!(specs[0].kind, EncoderKind::NumericAffine { mean: 3.0, std: 1.0 });
    assert_eq!(specs[0].width(), 2);

    let enc = encode_rows(&t, &specs, None);
    assert_eq!(enc.row(0), &[-1.0, 0.0]);
    assert_eq!(enc.row(1), &[1.0, 0.0]);
    // Missing: zero after z-score, indicator raised.
    assert_eq!(enc.row(2), &[0.0, 1.0]);
    assert_eq!(enc.row(3), &[997.0, 0.0]);
}

#[test]
fn constant_numeric_column_gets_unit_std() {
    let t = table(
        vec![fcol("x", FeatureKind::Numeric)],
        vec![vec![plain(num(5.0))], vec![plain(num(5.0))]],
    );
    let specs = fit_encoders(&t, &[0, 1], &EncodingConfig::default());
    assert_eq!(specs[0].kind, EncoderKind::NumericAffine { mean: 5.0, std: 1.0 });
    assert_eq!(encode_rows(&t, &specs, None).row(0), &[0.0, 0.0]);
}

#[test]
fn one_hot_vocabulary_and_oov() {
    let t = table(
        vec![fcol("color", FeatureKind::Categorical)],
        vec![
            vec![plain(cat("A"))],
            vec![plain(cat("B"))],
            vec![plain(cat("B"))],
            vec![plain(cat("C"))], // unseen in train
            vec![plain(Value::Missing)],
        ],
    );
    let specs = fit_encoders(&t, &[0, 1, 2], &EncodingConfig::default());
    // B outranks A by count; width is vocab + OOV.
    assert_eq!(specs[0].kind, EncoderKind::OneHot { vocab: vec!["B".into(), "A".into()] });
    assert_eq!(specs[0].width(), 3);

    let enc = encode_rows(&t, &specs, None);
    assert_eq!(enc.row(0), &[0.0, 1.0, 0.0]);
    assert_eq!(enc.row(1), &[1.0, 0.0, 0.0]);
    assert_eq!(enc.row(3), &[0.0, 0.0, 1.0]); // OOV slot
    assert_eq!(enc.row(4), &[0.0, 0.0, 0.0]); // Missing is not OOV

    // Exactly one unit entry for every non-missing row.
    for r in 0..4 {
        let ones = enc.row(r).iter().filter(|&&v| v == 1.0).count();
        let zeros = enc.row(r).iter().filter(|&&v| v == 0.0).count();
        assert_eq!((ones, zeros), (1, 2));
    }
}

#[test]
fn vocabulary_caps_by_count_then_lexicographic() {
    let values = ["A", "B", "C", "A", "B", "D"];
    let rows: Vec<Vec<FeatureValue>> = values.iter().map(|v| vec![plain(cat(v))]).collect();
    let t = table(vec![fcol("c", FeatureKind::Categorical)], rows);
    let train: Vec<usize> = (0..values.len()).collect();
    let config = EncodingConfig { max_vocab: 2, ..Default::default() };
    let specs = fit_encoders(&t, &train, &config);
    assert_eq!(specs[0].kind, EncoderKind::OneHot { vocab: vec!["A".into(), "B".into()] });

    let enc = encode_rows(&t, &specs, None);
    assert_eq!(enc.row(2), &[0.0, 0.0, 1.0]); // C fell out of the capped vocabulary
}

#[test]
fn fa_examples() {
    let vocab = vec!["A".to_string(), "B".to_string()];
    let two = |pairs: &[(&str, u64)]| match freq(pairs) {
        FeatureValue::Freq(m) => m,
        _ => unreachable!(),
    };

    assert_eq!(encode_fa(&two(&[("A", 3), ("B", 1)]), &vocab, 2), vec![0.75, 0.25, 0.0]);
    // B and C tie on count; B wins lexicographically and C is dropped.
    assert_eq!(
        encode_fa(&two(&[("A", 3), ("B", 1), ("C", 1)]), &vocab, 2),
        vec![0.75, 0.25, 0.0]
    );
    assert_eq!(encode_fa(&two(&[("A", 5)]), &vocab, 2), vec![1.0, 0.0, 0.0]);
    assert_eq!(encode_fa(&FrequencyMap::new(), &vocab, 2), vec![0.0, 0.0, 0.0]);
    // Retained categories outside the vocabulary pour into the OOV slot.
    assert_eq!(encode_fa(&two(&[("Z", 2)]), &vocab, 2), vec![0.0, 0.0, 1.0]);
    // m = 1 reduces to a mode one-hot, ties lexicographic.
    assert_eq!(encode_fa(&two(&[("A", 2), ("B", 2)]), &vocab, 1), vec![1.0, 0.0, 0.0]);
}

#[test]
fn fa_vocabulary_pools_train_histograms() {
    let t = table(
        vec![fcol("tags", FeatureKind::Frequency)],
        vec![
            vec![freq(&[("x", 2), ("y", 1)])],
            vec![freq(&[("x", 1), ("z", 5)])],
            vec![plain(Value::Missing)],
            vec![freq(&[("w", 99)])], // non-train
        ],
    );
    let config = EncodingConfig { max_vocab: 2, fa_m: 2, ..Default::default() };
    let specs = fit_encoders(&t, &[0, 1, 2], &config);
    // Pooled train counts: z=5, x=3, y=1 -> capped vocabulary [z, x].
    assert_eq!(
        specs[0].kind,
        EncoderKind::FaWeighted { vocab: vec!["z".into(), "x".into()], m: 2 }
    );

    let enc = encode_rows(&t, &specs, None);
    assert_eq!(enc.row(0), &[0.0, 2.0 / 3.0, 1.0 / 3.0]); // x kept, y -> OOV
    assert_eq!(enc.row(1), &[5.0 / 6.0, 1.0 / 6.0, 0.0]);
    assert_eq!(enc.row(2), &[0.0, 0.0, 0.0]);
    assert_eq!(enc.row(3), &[0.0, 0.0, 1.0]);
}

#[test]
fn text_hashing_is_deterministic_and_normalized() {
    let a = encode_text("solid fun game", 16, None);
    let b = encode_text("solid fun game", 16, None);
    assert_eq!(a, b);
    let norm: f64 = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    assert!((norm - 1.0).abs() < 1e-12);
    assert_eq!(encode_text("", 16, None), vec![0.0; 16]);
    assert_eq!(encode_text("   ", 16, None), vec![0.0; 16]);
    // Case folding: tokens differ only by case, vectors match.
    assert_eq!(encode_text("Solid FUN", 16, None), encode_text("solid fun", 16, None));
}

#[test]
fn pretrained_vectors_average_known_tokens() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("vectors.txt");
    std::fs::write(&path, "dog 1.0 2.0\ncat 0.5 0.25\n").unwrap();
    let wv = load_word_vectors(&path).unwrap();
    assert_eq!((wv.dim, wv.len()), (2, 2));

    assert_eq!(encode_text("Dog dog", 2, Some(&wv)), vec![1.0, 2.0]);
    assert_eq!(encode_text("dog cat", 2, Some(&wv)), vec![0.75, 1.125]);
    // Unknown tokens are skipped, not zero-averaged.
    assert_eq!(encode_text("dog zebra", 2, Some(&wv)), vec![1.0, 2.0]);
    assert_eq!(encode_text("zebra", 2, Some(&wv)), vec![0.0, 0.0]);
}

#[test]
fn word_vector_file_errors() {
    let dir = tempfile::tempdir().unwrap();
    let ragged = dir.path().join("ragged.txt");
    std::fs::write(&ragged, "dog 1.0 2.0\ncat 0.5\n").unwrap();
    let err = load_word_vectors(&ragged).unwrap_err();
    assert!(matches!(err, EncodingError::BadVectorFile { line: 2, .. }), "{err}");

    let garbled = dir.path().join("garbled.txt");
    std::fs::write(&garbled, "dog one two\n").unwrap();
    assert!(load_word_vectors(&garbled).is_err());

    let empty = dir.path().join("empty.txt");
    std::fs::write(&empty, "\n").unwrap();
    assert!(load_word_vectors(&empty).is_err());
}

#[test]
fn widths_concatenate_in_column_order() {
    let t = table(
        vec![fcol("x", FeatureKind::Numeric), fcol("c", FeatureKind::Categorical)],
        vec![
            vec![plain(num(2.0)), plain(cat("A"))],
            vec![plain(num(4.0)), plain(cat("B"))],
            vec![plain(Value::Missing), plain(Value::Missing)],
        ],
    );
    let specs = fit_encoders(&t, &[0, 1], &EncodingConfig::default());
    // 1 numeric + 1 indicator + (2 categories + OOV) = 5.
    assert_eq!(encoded_width(&specs), 5);
    let enc = encode_rows(&t, &specs, None);
    assert_eq!(enc.cols, 5);
    assert_eq!(enc.row(0), &[-1.0, 0.0, 1.0, 0.0, 0.0]);
    // All-missing row: zeros everywhere, indicator bit set.
    assert_eq!(enc.row(2), &[0.0, 1.0, 0.0, 0.0, 0.0]);
}

#[test]
fn fitting_ignores_rows_outside_the_train_split() {
    let mut t = table(
        vec![fcol("x", FeatureKind::Numeric), fcol("c", FeatureKind::Categorical)],
        vec![
            vec![plain(num(2.0)), plain(cat("A"))],
            vec![plain(num(4.0)), plain(cat("B"))],
            vec![plain(num(8.0)), plain(cat("C"))],
        ],
    );
    let config = EncodingConfig::default();
    let before = fit_encoders(&t, &[0, 1], &config);
    t.rows[2] = vec![plain(num(-9999.0)), plain(cat("HUGE"))];
    let after = fit_encoders(&t, &[0, 1], &config);
    assert_eq!(before, after);
}

#[test]
fn permuting_rows_permutes_encodings() {
    let t = table(
        vec![fcol("c", FeatureKind::Categorical)],
        vec![vec![plain(cat("A"))], vec![plain(cat("B"))], vec![plain(cat("A"))]],
    );
    let specs = fit_encoders(&t, &[0, 1, 2], &EncodingConfig::default());
    let enc = encode_rows(&t, &specs, None);

    let mut permuted = t.clone();
    permuted.rows.rotate_left(1);
    let enc_p = encode_rows(&permuted, &specs, None);
    assert_eq!(enc_p.row(0), enc.row(1));
    assert_eq!(enc_p.row(2), enc.row(0));
}

#[test]
fn spec_serialization_roundtrip() {
    let t = table(
        vec![
            fcol("x", FeatureKind::Numeric),
            fcol("c", FeatureKind::Categorical),
            fcol("body", FeatureKind::Text),
            fcol("tags", FeatureKind::Frequency),
        ],
        vec![vec![
            plain(num(1.5)),
            plain(cat("A")),
            plain(text("hello world")),
            freq(&[("x", 2)]),
        ]],
    );
    let specs = fit_encoders(&t, &[0], &EncodingConfig::default());
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("encoders.json");
    save_encoder_specs(&path, &specs).unwrap();
    let loaded = load_encoder_specs(&path).unwrap();
    assert_eq!(specs, loaded);
}

proptest! {
    #[test]
    fn fa_weights_always_sum_to_one(
        entries in prop::collection::btree_map("[a-e]", 1u64..100, 1..6),
        vocab_letters in prop::collection::vec("[a-e]", 0..4),
        m in 1usize..5,
    ) {
        let mut vocab: Vec<String> = vocab_letters;
        vocab.dedup();
        let out = encode_fa(&entries, &vocab, m);
        let sum: f64 = out.iter().sum();
        prop_assert!((sum - 1.0).abs() < 1e-12, "sum was {sum}");
        prop_assert!(out.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn hashed_text_has_unit_norm_or_is_zero(s in "[a-z ]{0,40}") {
        let v = encode_text(&s, 8, None);
        let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        prop_assert!(norm == 0.0 || (norm - 1.0).abs() < 1e-12);
    }
}
