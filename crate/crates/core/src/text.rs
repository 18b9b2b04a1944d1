//! Document cleaning, tokenization and text featurizers.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::hash::Hasher;
use std::io::BufRead;
use std::path::Path;

use fnv::FnvHasher;
use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

use crate::error::{Error, Result};

const DEFAULT_STOPWORDS: &str = include_str!("../data/stopwords_en.txt");

/// Lowercase, NFC-normalize, strip control characters, collapse whitespace
/// and undo common OCR digit/letter confusions (`0` -> `o`, `1` -> `l`).
///
/// A run of `0`/`1` characters is rewritten only when a letter sits directly
/// on both sides of it, so `f00d` becomes `food` while `2019` and `1kg` stay.
pub fn normalize_text(raw: &str) -> String {
    let lowered: String = raw.to_lowercase().nfc().collect();

    let mut spaced = String::with_capacity(lowered.len());
    for c in lowered.chars() {
        if c.is_whitespace() {
            spaced.push(' ');
        } else if !c.is_control() {
            spaced.push(c);
        }
    }

    let chars: Vec<char> = spaced
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .chars()
        .collect();
    let mut out: Vec<char> = chars.clone();
    let mut i = 0;
    while i < chars.len() {
        if chars[i] == '0' || chars[i] == '1' {
            let start = i;
            while i < chars.len() && (chars[i] == '0' || chars[i] == '1') {
                i += 1;
            }
            let before = start.checked_sub(1).map(|j| chars[j].is_alphabetic());
            let after = chars.get(i).map(|c| c.is_alphabetic());
            if before == Some(true) && after == Some(true) {
                for c in &mut out[start..i] {
                    *c = if *c == '0' { 'o' } else { 'l' };
                }
            }
        } else {
            i += 1;
        }
    }
    out.into_iter().collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Stopwords(BTreeSet<String>);

impl Stopwords {
    /// Parse one word per line; blank lines and `#` comments are skipped.
    pub fn parse(text: &str) -> Self {
        Stopwords(
            text.lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#'))
                .map(str::to_lowercase)
                .collect(),
        )
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(Self::parse(&text))
    }

    pub fn empty() -> Self {
        Stopwords(BTreeSet::new())
    }

    pub fn contains(&self, token: &str) -> bool {
        self.0.contains(token)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl Default for Stopwords {
    fn default() -> Self {
        Self::parse(DEFAULT_STOPWORDS)
    }
}

impl<S: Into<String>> FromIterator<S> for Stopwords {
    fn from_iter<I: IntoIterator<Item = S>>(iter: I) -> Self {
        Stopwords(iter.into_iter().map(Into::into).collect())
    }
}

/// Split on anything outside `[a-z0-9]`, dropping one-character tokens and stop words.
pub fn tokenize(cleaned: &str, stopwords: &Stopwords) -> Vec<String> {
    cleaned
        .split(|c: char| !(c.is_ascii_lowercase() || c.is_ascii_digit()))
        .filter(|t| t.len() >= 2 && !stopwords.contains(t))
        .map(str::to_owned)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TfidfModel {
    pub vocabulary: BTreeMap<String, usize>,
    pub idf: Vec<f64>,
    pub num_docs: usize,
    pub max_features: usize,
}

/// Fit a TF-IDF vocabulary of the `max_features` most document-frequent
/// tokens (ties broken lexicographically) with smoothed idf
/// `ln((1 + N) / (1 + df)) + 1`. Vocabulary indices follow token order.
pub fn fit_tfidf(corpus: &[Vec<String>], max_features: usize) -> Result<TfidfModel> {
    if corpus.is_empty() {
        return Err(Error::Empty("tf-idf corpus"));
    }
    let mut df: HashMap<&str, usize> = HashMap::new();
    for doc in corpus {
        let unique: BTreeSet<&str> = doc.iter().map(String::as_str).collect();
        for t in unique {
            *df.entry(t).or_default() += 1;
        }
    }
    let mut ranked: Vec<(&str, usize)> = df.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    ranked.truncate(max_features);
    ranked.sort_by(|a, b| a.0.cmp(b.0));

    let n = corpus.len() as f64;
    let vocabulary = ranked
        .iter()
        .enumerate()
        .map(|(i, (t, _))| (t.to_string(), i))
        .collect();
    let idf = ranked
        .iter()
        .map(|&(_, d)| ((1.0 + n) / (1.0 + d as f64)).ln() + 1.0)
        .collect();
    Ok(TfidfModel {
        vocabulary,
        idf,
        num_docs: corpus.len(),
        max_features,
    })
}

impl TfidfModel {
    pub fn dim(&self) -> usize {
        self.idf.len()
    }

    /// Raw term counts times idf, L2-normalized unless all zero.
    pub fn transform(&self, tokens: &[String]) -> Vec<f64> {
        let mut v = vec![0.0; self.dim()];
        for t in tokens {
            if let Some(&j) = self.vocabulary.get(t) {
                v[j] += 1.0;
            }
        }
        for (x, idf) in v.iter_mut().zip(&self.idf) {
            *x *= idf;
        }
        l2_normalize(&mut v);
        v
    }
}

pub fn transform_tfidf(model: &TfidfModel, tokens: &[String]) -> Vec<f64> {
    model.transform(tokens)
}

fn l2_normalize(v: &mut [f64]) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
}

fn token_hash(token: &str, seed: u64) -> u64 {
    // FNV-1a over the token bytes, keyed by the seed, then a splitmix64 finalizer
    let mut h = FnvHasher::with_key(0xcbf2_9ce4_8422_2325 ^ seed.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    h.write(token.as_bytes());
    let mut z = h.finish();
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Signed feature hashing: each token adds ±1 at a seeded bucket.
pub fn hash_embed(tokens: &[String], dim: usize, seed: u64) -> Result<Vec<f64>> {
    if dim < 8 {
        return Err(Error::InvalidConfig(format!("hash dim {dim} must be >= 8")));
    }
    // integer accumulation keeps the result independent of token order
    let mut acc = vec![0i64; dim];
    for t in tokens {
        let h = token_hash(t, seed);
        let idx = (h % dim as u64) as usize;
        acc[idx] += if h >> 63 == 0 { 1 } else { -1 };
    }
    let mut v: Vec<f64> = acc.into_iter().map(|c| c as f64).collect();
    l2_normalize(&mut v);
    Ok(v)
}

/// Precomputed per-record text vectors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EmbeddingTable {
    dim: Option<usize>,
    entries: HashMap<String, Vec<f64>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct EmbeddingRow {
    record_id: String,
    vector: Vec<f64>,
}

#[derive(Serialize)]
struct EmbeddingRowRef<'a> {
    record_id: &'a str,
    vector: &'a [f64],
}

impl EmbeddingTable {
    pub fn dim(&self) -> Option<usize> {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn insert(&mut self, record_id: String, vector: Vec<f64>) -> Result<()> {
        if vector.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("embedding vector"));
        }
        match self.dim {
            Some(d) if d != vector.len() => {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    actual: vector.len(),
                })
            }
            None => self.dim = Some(vector.len()),
            _ => {}
        }
        if self.entries.insert(record_id.clone(), vector).is_some() {
            log::warn!("duplicate embedding for record {record_id}; keeping the last one");
        }
        Ok(())
    }

    pub fn get(&self, record_id: &str) -> Result<&[f64]> {
        if self.dim.is_none() {
            return Err(Error::Empty("embedding table"));
        }
        self.entries
            .get(record_id)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::MissingEmbedding(vec![record_id.to_string()]))
    }

    pub fn parse<R: BufRead>(reader: R) -> Result<Self> {
        let mut table = EmbeddingTable::default();
        for (i, line) in reader.lines().enumerate() {
            let line_no = i + 1;
            let line = line.map_err(|e| Error::Embedding {
                line: line_no,
                message: e.to_string(),
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let row: EmbeddingRow = serde_json::from_str(&line).map_err(|e| Error::Embedding {
                line: line_no,
                message: e.to_string(),
            })?;
            let id = row.record_id.clone();
            table.insert(row.record_id, row.vector).map_err(|e| Error::Embedding {
                line: line_no,
                message: format!("record {id}: {e}"),
            })?;
        }
        Ok(table)
    }

    /// One JSON object per line, sorted by record id.
    pub fn to_jsonl(&self) -> Result<String> {
        let mut ids: Vec<&String> = self.entries.keys().collect();
        ids.sort();
        let mut out = String::new();
        for id in ids {
            out.push_str(&crate::json::to_string(&EmbeddingRowRef {
                record_id: id,
                vector: &self.entries[id],
            })?);
            out.push('\n');
        }
        Ok(out)
    }
}

pub fn load_embeddings(path: &Path) -> Result<EmbeddingTable> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    EmbeddingTable::parse(std::io::BufReader::new(f))
}
