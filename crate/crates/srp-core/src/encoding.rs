//! Fixed-width numeric encodings for feature columns.
//!
//! Each column of a feature table gets one fitted encoder: z-score plus a
//! missing-indicator bit for numerics, one-hot with a reserved
//! out-of-vocabulary slot for categoricals, frequency-weighted one-hot for
//! histogram columns, and either pretrained word vectors or signed feature
//! hashing for text. All statistics and vocabularies are fitted on the
//! training rows only, so refitting after any mutation of non-train rows
//! yields the same encoders. Encoded rows concatenate the per-column
//! vectors in column order.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::Tensor;
use crate::synthesis::{FeatureKind, FeatureTable, FeatureValue, FrequencyMap};

#[derive(Debug, Error)]
pub enum EncodingError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("word-vector file {path} line {line}: {problem}")]
    BadVectorFile { path: String, line: usize, problem: String },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Knobs for [`fit_encoders`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EncodingConfig {
    /// Largest categorical vocabulary (the OOV slot comes on top).
    pub max_vocab: usize,
    /// How many top categories a frequency histogram retains.
    pub fa_m: usize,
    /// Output width of the hashing text encoder.
    pub text_hash_width: usize,
    /// Use pretrained word vectors instead of hashing when set.
    pub use_word_vectors: bool,
}

impl Default for EncodingConfig {
    fn default() -> Self {
        EncodingConfig { max_vocab: 100, fa_m: 2, text_hash_width: 16, use_word_vectors: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "encoder")]
pub enum EncoderKind {
    /// (v - mean) / std, plus a trailing missing-indicator bit.
    NumericAffine { mean: f64, std: f64 },
    /// One slot per vocabulary entry plus a trailing OOV slot.
    OneHot { vocab: Vec<String> },
    /// Frequency-weighted one-hot over the same vocabulary layout.
    FaWeighted { vocab: Vec<String>, m: usize },
    /// Text vector of fixed width; `pretrained` selects word vectors over
    /// signed feature hashing.
    TextVector { width: usize, pretrained: bool },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnEncoderSpec {
    pub column: String,
    pub kind: EncoderKind,
}

impl ColumnEncoderSpec {
    pub fn width(&self) -> usize {
        match &self.kind {
            EncoderKind::NumericAffine { .. } => 2,
            EncoderKind::OneHot { vocab } | EncoderKind::FaWeighted { vocab, .. } => vocab.len() + 1,
            EncoderKind::TextVector { width, .. } => *width,
        }
    }
}

pub fn encoded_width(specs: &[ColumnEncoderSpec]) -> usize {
    specs.iter().map(ColumnEncoderSpec::width).sum()
}

/// Orders categories by descending count, ties lexicographically, and caps
/// the vocabulary size.
fn build_vocab(counts: &HashMap<String, u64>, cap: usize) -> Vec<String> {
    let mut entries: Vec<(&String, u64)> = counts.iter().map(|(k, &v)| (k, v)).collect();
    entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    entries.into_iter().take(cap).map(|(k, _)| k.clone()).collect()
}

/// Fits one encoder per feature column from the training rows only.
pub fn fit_encoders(
    table: &FeatureTable,
    train_rows: &[usize],
    config: &EncodingConfig,
) -> Vec<ColumnEncoderSpec> {
    table
        .columns
        .iter()
        .enumerate()
        .map(|(c, col)| {
            let kind = match col.kind {
                FeatureKind::Numeric => {
                    let values: Vec<f64> = train_rows
                        .iter()
                        .filter_map(|&r| match &table.rows[r][c] {
                            FeatureValue::Plain(v) => v.as_number(),
                            FeatureValue::Freq(_) => None,
                        })
                        .collect();
                    let n = values.len() as f64;
                    let mean = if values.is_empty() { 0.0 } else { values.iter().sum::<f64>() / n };
                    let var = if values.is_empty() {
                        0.0
                    } else {
                        values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n
                    };
                    let std = if var.sqrt() > 1e-12 { var.sqrt() } else { 1.0 };
                    EncoderKind::NumericAffine { mean, std }
                }
                FeatureKind::Categorical => {
                    let mut counts: HashMap<String, u64> = HashMap::new();
                    for &r in train_rows {
                        if let FeatureValue::Plain(v) = &table.rows[r][c] {
                            if let Some(s) = v.as_str() {
                                *counts.entry(s.to_string()).or_insert(0) += 1;
                            }
                        }
                    }
                    EncoderKind::OneHot { vocab: build_vocab(&counts, config.max_vocab) }
                }
                FeatureKind::Frequency => {
                    let mut counts: HashMap<String, u64> = HashMap::new();
                    for &r in train_rows {
                        if let FeatureValue::Freq(map) = &table.rows[r][c] {
                            for (cat, &n) in map {
                                *counts.entry(cat.clone()).or_insert(0) += n;
                            }
                        }
                    }
                    EncoderKind::FaWeighted {
                        vocab: build_vocab(&counts, config.max_vocab),
                        m: config.fa_m,
                    }
                }
                FeatureKind::Text => EncoderKind::TextVector {
                    width: config.text_hash_width,
                    pretrained: config.use_word_vectors,
                },
            };
            ColumnEncoderSpec { column: col.name.clone(), kind }
        })
        .collect()
}

/// Frequency-weighted one-hot: keep the `m` highest-count categories (ties
/// broken lexicographically), renormalize their counts over the retained
/// subset, and add each weight to its vocabulary slot — or to the OOV slot
/// for retained categories outside the vocabulary. An empty map encodes as
/// all zeros.
pub fn encode_fa(freq: &FrequencyMap, vocab: &[String], m: usize) -> Vec<f64> {
    let mut out = vec![0.0; vocab.len() + 1];
    if freq.is_empty() || m == 0 {
        return out;
    }
    let mut entries: Vec<(&String, u64)> = freq.iter().map(|(k, &v)| (k, v)).collect();
    entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    entries.truncate(m);
    let denom: u64 = entries.iter().map(|(_, n)| n).sum();
    for (cat, n) in entries {
        let slot = vocab.iter().position(|v| v == cat).unwrap_or(vocab.len());
        out[slot] += n as f64 / denom as f64;
    }
    out
}

/// Word vectors read from a text file of `token v1 v2 ... vd` lines.
#[derive(Debug, Clone)]
pub struct WordVectors {
    pub dim: usize,
    map: HashMap<String, Vec<f64>>,
}

impl WordVectors {
    pub fn get(&self, token: &str) -> Option<&[f64]> {
        self.map.get(token).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

pub fn load_word_vectors(path: &Path) -> Result<WordVectors, EncodingError> {
    let text = std::fs::read_to_string(path)?;
    let name = path.display().to_string();
    let mut map = HashMap::new();
    let mut dim = None;
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let token = parts.next().expect("non-empty line has a first token").to_string();
        let values: Result<Vec<f64>, _> = parts.map(str::parse::<f64>).collect();
        let values = values.map_err(|e| EncodingError::BadVectorFile {
            path: name.clone(),
            line: i + 1,
            problem: e.to_string(),
        })?;
        match dim {
            None if values.is_empty() => {
                return Err(EncodingError::BadVectorFile {
                    path: name,
                    line: i + 1,
                    problem: "no vector components".into(),
                })
            }
            None => dim = Some(values.len()),
            Some(d) if d != values.len() => {
                return Err(EncodingError::BadVectorFile {
                    path: name,
                    line: i + 1,
                    problem: format!("expected {d} components, got {}", values.len()),
                })
            }
            Some(_) => {}
        }
        map.insert(token, values);
    }
    match dim {
        Some(dim) => Ok(WordVectors { dim, map }),
        None => Err(EncodingError::BadVectorFile {
            path: name,
            line: 0,
            problem: "file holds no vectors".into(),
        }),
    }
}

const FNV_OFFSET: u64 = 0xcbf29ce484222325;
const FNV_PRIME: u64 = 0x100000001b3;

fn fnv1a(token: &str) -> u64 {
    let mut h = FNV_OFFSET;
    for b in token.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// Text to a fixed-width vector: the mean of pretrained token vectors when
/// available (tokens without a vector are skipped), otherwise signed
/// feature hashing of tokens, L2-normalized. Tokenization is lowercased
/// whitespace splitting; empty text gives a zero vector.
pub fn encode_text(s: &str, width: usize, vectors: Option<&WordVectors>) -> Vec<f64> {
    let mut out = vec![0.0; width];
    let tokens: Vec<String> = s.split_whitespace().map(str::to_lowercase).collect();
    if tokens.is_empty() {
        return out;
    }
    if let Some(wv) = vectors {
        assert_eq!(wv.dim, width, "word-vector dimension {} != encoder width {width}", wv.dim);
        let mut found = 0usize;
        for t in &tokens {
            if let Some(v) = wv.get(t) {
                found += 1;
                for (o, &x) in out.iter_mut().zip(v) {
                    *o += x;
                }
            }
        }
        if found > 0 {
            for o in &mut out {
                *o /= found as f64;
            }
        }
        return out;
    }
    for t in &tokens {
        let h = fnv1a(t);
        let slot = (h % width as u64) as usize;
        let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
        out[slot] += sign;
    }
    let norm = out.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        for o in &mut out {
            *o /= norm;
        }
    }
    out
}

fn one_hot_slot(vocab: &HashMap<&str, usize>, width: usize, value: &str) -> usize {
    vocab.get(value).copied().unwrap_or(width - 1)
}

/// Encodes every row of a feature table into a dense matrix, one fixed-width
/// vector per row, per-column encodings concatenated in column order.
/// Missing values encode as zeros (numerics additionally raise their
/// indicator bit). Panics if the fitted specs do not cover the table or if
/// pretrained vectors were fitted but not supplied.
pub fn encode_rows(
    table: &FeatureTable,
    specs: &[ColumnEncoderSpec],
    vectors: Option<&WordVectors>,
) -> Tensor {
    assert_eq!(specs.len(), table.columns.len(), "one encoder spec per feature column");
    let width = encoded_width(specs);
    // Vocabulary lookups once per call, not once per row.
    let lookups: Vec<Option<HashMap<&str, usize>>> = specs
        .iter()
        .map(|s| match &s.kind {
            EncoderKind::OneHot { vocab } | EncoderKind::FaWeighted { vocab, .. } => Some(
                vocab.iter().enumerate().map(|(i, v)| (v.as_str(), i)).collect(),
            ),
            _ => None,
        })
        .collect();

    let mut out = Tensor::zeros(table.rows.len(), width);
    for (r, row) in table.rows.iter().enumerate() {
        let dest = out.row_mut(r);
        let mut offset = 0;
        for (c, spec) in specs.iter().enumerate() {
            let w = spec.width();
            let slice = &mut dest[offset..offset + w];
            match (&spec.kind, &row[c]) {
                (EncoderKind::NumericAffine { mean, std }, FeatureValue::Plain(v)) => {
                    match v.as_number() {
                        Some(x) => slice[0] = (x - mean) / std,
                        None => slice[1] = 1.0,
                    }
                }
                (EncoderKind::OneHot { vocab }, FeatureValue::Plain(v)) => {
                    if let Some(s) = v.as_str() {
                        let lookup = lookups[c].as_ref().expect("one-hot lookup built above");
                        slice[one_hot_slot(lookup, vocab.len() + 1, s)] = 1.0;
                    }
                }
                (EncoderKind::FaWeighted { vocab, m }, FeatureValue::Freq(freq)) => {
                    if !freq.is_empty() && *m > 0 {
                        let lookup = lookups[c].as_ref().expect("fa lookup built above");
                        let mut entries: Vec<(&String, u64)> =
                            freq.iter().map(|(k, &v)| (k, v)).collect();
                        entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
                        entries.truncate(*m);
                        let denom: u64 = entries.iter().map(|(_, n)| n).sum();
                        for (cat, n) in entries {
                            let slot = one_hot_slot(lookup, vocab.len() + 1, cat);
                            slice[slot] += n as f64 / denom as f64;
                        }
                    }
                }
                (EncoderKind::FaWeighted { .. }, FeatureValue::Plain(v)) => {
                    assert!(v.is_missing(), "histogram column holds a plain non-missing value");
                }
                (EncoderKind::TextVector { width, pretrained }, FeatureValue::Plain(v)) => {
                    if let Some(s) = v.as_str() {
                        assert!(
                            !pretrained || vectors.is_some(),
                            "encoders were fitted with pretrained vectors; none supplied"
                        );
                        let enc =
                            encode_text(s, *width, if *pretrained { vectors } else { None });
                        slice.copy_from_slice(&enc);
                    }
                }
                (kind, cell) => {
                    panic!("encoder {kind:?} cannot encode {cell:?} in column {}", spec.column)
                }
            }
            offset += w;
        }
    }
    out
}

/// Encodes a single plain value under one spec; used where whole-table
/// encoding is overkill (tests, spot checks).
pub fn encode_value(
    spec: &ColumnEncoderSpec,
    value: &FeatureValue,
    vectors: Option<&WordVectors>,
) -> Vec<f64> {
    let table = FeatureTable {
        target_table: 0,
        columns: vec![crate::synthesis::FeatureColumn {
            name: spec.column.clone(),
            kind: match spec.kind {
                EncoderKind::NumericAffine { .. } => FeatureKind::Numeric,
                EncoderKind::OneHot { .. } => FeatureKind::Categorical,
                EncoderKind::FaWeighted { .. } => FeatureKind::Frequency,
                EncoderKind::TextVector { .. } => FeatureKind::Text,
            },
            source: crate::synthesis::FeatureSource::Original { column: 0 },
        }],
        rows: vec![vec![value.clone()]],
    };
    encode_rows(&table, std::slice::from_ref(spec), vectors).data
}

/// Saves fitted encoder specs as JSON for cache reuse across runs.
pub fn save_encoder_specs(path: &Path, specs: &[ColumnEncoderSpec]) -> Result<(), EncodingError> {
    let text = serde_json::to_string_pretty(specs)?;
    std::fs::write(path, text)?;
    Ok(())
}

pub fn load_encoder_specs(path: &Path) -> Result<Vec<ColumnEncoderSpec>, EncodingError> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

#[cfg(test)]
mod tests;
