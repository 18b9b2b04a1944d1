//! Record -> fused feature vector, as a fitted and serializable unit.

use std::hash::Hasher;
use std::path::PathBuf;
use std::sync::Arc;

use fnv::FnvHasher;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, DistrictRecord, FeatureVector, IndicatorSet};
use crate::error::{Error, Result};
use crate::fuse::{apply_minmax, fit_minmax, fuse_features, NormalizationSpec};
use crate::text::{fit_tfidf, hash_embed, normalize_text, tokenize, EmbeddingTable, Stopwords, TfidfModel};

/// Where the text segment of the fused vector comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TextProvider {
    /// No text segment (structured-only ablation).
    None,
    Tfidf {
        max_features: usize,
    },
    Hashed {
        dim: usize,
    },
    /// Precomputed vectors looked up by record id.
    External {
        dim: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeaturizerConfig {
    pub text: TextProvider,
    /// Include the Min-Max scaled indicators.
    pub structured: bool,
    pub hash_seed: u64,
    /// Stop-word file; the bundled English list when absent.
    pub stopwords_path: Option<PathBuf>,
}

impl Default for FeaturizerConfig {
    fn default() -> Self {
        FeaturizerConfig {
            text: TextProvider::Tfidf { max_features: 2048 },
            structured: true,
            hash_seed: 0,
            stopwords_path: None,
        }
    }
}

impl FeaturizerConfig {
    pub fn text_only(&self) -> Self {
        FeaturizerConfig {
            structured: false,
            ..self.clone()
        }
    }

    pub fn structured_only(&self) -> Self {
        FeaturizerConfig {
            text: TextProvider::None,
            structured: true,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Featurizer {
    pub config: FeaturizerConfig,
    pub stopwords: Stopwords,
    pub tfidf: Option<TfidfModel>,
    pub normalization: Option<NormalizationSpec>,
    #[serde(skip)]
    embeddings: Option<Arc<EmbeddingTable>>,
}

impl PartialEq for Featurizer {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config
            && self.stopwords == other.stopwords
            && self.tfidf == other.tfidf
            && self.normalization == other.normalization
    }
}

impl Featurizer {
    /// Fit the vocabulary and Min-Max ranges on `train` only.
    pub fn fit(train: &Dataset, config: &FeaturizerConfig) -> Result<Self> {
        let stopwords = match &config.stopwords_path {
            Some(p) => Stopwords::from_file(p)?,
            None => Stopwords::default(),
        };
        let tfidf = match config.text {
            TextProvider::Tfidf { max_features } => {
                let corpus: Vec<Vec<String>> = train
                    .records
                    .iter()
                    .map(|r| tokenize(&normalize_text(&r.text), &stopwords))
                    .collect();
                Some(fit_tfidf(&corpus, max_features)?)
            }
            TextProvider::Hashed { dim } if dim < 8 => {
                return Err(Error::InvalidConfig(format!("hash dim {dim} must be >= 8")))
            }
            _ => None,
        };
        if config.text == TextProvider::None && !config.structured {
            return Err(Error::InvalidConfig(
                "featurizer has neither a text nor a structured segment".into(),
            ));
        }
        let normalization = if config.structured {
            Some(fit_minmax(train)?)
        } else {
            None
        };
        Ok(Featurizer {
            config: config.clone(),
            stopwords,
            tfidf,
            normalization,
            embeddings: None,
        })
    }

    pub fn with_embeddings(mut self, table: Arc<EmbeddingTable>) -> Result<Self> {
        if let (TextProvider::External { dim }, Some(d)) = (&self.config.text, table.dim()) {
            if *dim != d {
                return Err(Error::DimensionMismatch {
                    expected: *dim,
                    actual: d,
                });
            }
        }
        self.embeddings = Some(table);
        Ok(self)
    }

    pub fn needs_embeddings(&self) -> bool {
        matches!(self.config.text, TextProvider::External { .. })
    }

    pub fn text_dim(&self) -> usize {
        match &self.config.text {
            TextProvider::None => 0,
            TextProvider::Tfidf { .. } => self.tfidf.as_ref().map_or(0, TfidfModel::dim),
            TextProvider::Hashed { dim } | TextProvider::External { dim } => *dim,
        }
    }

    pub fn structured_dim(&self) -> usize {
        if self.config.structured {
            IndicatorSet::LEN
        } else {
            0
        }
    }

    pub fn dim(&self) -> usize {
        self.text_dim() + self.structured_dim()
    }

    /// Fingerprint of the segment layout (provider, dimensions, indicator order).
    pub fn layout_hash(&self) -> u64 {
        let kind = match &self.config.text {
            TextProvider::None => "none",
            TextProvider::Tfidf { .. } => "tfidf",
            TextProvider::Hashed { .. } => "hashed",
            TextProvider::External { .. } => "external",
        };
        let mut desc = format!("text={kind}:{};structured=", self.text_dim());
        if self.config.structured {
            desc.push_str(&IndicatorSet::NAMES.join(","));
        }
        if let Some(t) = &self.tfidf {
            for (tok, idx) in &t.vocabulary {
                desc.push_str(&format!(";{tok}={idx}"));
            }
        }
        let mut h = FnvHasher::default();
        h.write(desc.as_bytes());
        h.finish()
    }

    fn text_vector(&self, r: &DistrictRecord) -> Result<Vec<f64>> {
        let tokens = || tokenize(&normalize_text(&r.text), &self.stopwords);
        match &self.config.text {
            TextProvider::None => Ok(Vec::new()),
            TextProvider::Tfidf { .. } => {
                let model = self
                    .tfidf
                    .as_ref()
                    .ok_or_else(|| Error::InvalidConfig("tf-idf model missing".into()))?;
                Ok(model.transform(&tokens()))
            }
            TextProvider::Hashed { dim } => hash_embed(&tokens(), *dim, self.config.hash_seed),
            TextProvider::External { dim } => {
                let table = self
                    .embeddings
                    .as_ref()
                    .ok_or(Error::Empty("embedding table (none attached)"))?;
                let v = table.get(&r.record_id)?;
                if v.len() != *dim {
                    return Err(Error::DimensionMismatch {
                        expected: *dim,
                        actual: v.len(),
                    });
                }
                Ok(v.to_vec())
            }
        }
    }

    pub fn featurize(&self, r: &DistrictRecord) -> Result<FeatureVector> {
        let text = self.text_vector(r)?;
        let structured = match &self.normalization {
            Some(spec) if self.config.structured => apply_minmax(spec, &r.indicators),
            _ => Vec::new(),
        };
        fuse_features(&text, &structured)
    }

    /// Featurize every record; missing embeddings are reported together.
    pub fn featurize_all(&self, records: &[DistrictRecord]) -> Result<Vec<FeatureVector>> {
        let mut out = Vec::with_capacity(records.len());
        let mut missing = Vec::new();
        for r in records {
            match self.featurize(r) {
                Ok(v) => out.push(v),
                Err(Error::MissingEmbedding(ids)) => missing.extend(ids),
                Err(e) => return Err(e),
            }
        }
        if !missing.is_empty() {
            return Err(Error::MissingEmbedding(missing));
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::tests::record;
    use crate::data::Group;

    fn small() -> Dataset {
        let mut a = record("a", Group::Rural, Some(1));
        a.text = "acute shortage of grain".into();
        let mut b = record("b", Group::Urban, Some(0));
        b.text = "stable supply of grain".into();
        b.indicators.malnutrition_rate = 0.5;
        Dataset::new(vec![a, b], 1, vec![]).unwrap()
    }

    #[test]
    fn tfidf_featurizer_dims() {
        let ds = small();
        let f = Featurizer::fit(&ds, &FeaturizerConfig::default()).unwrap();
        assert_eq!(f.text_dim(), 5);
        assert_eq!(f.dim(), 11);
        let v = f.featurize(&ds.records[1]).unwrap();
        assert_eq!(v.dim(), 11);
        assert_eq!(v.values[5], 1.0);
    }

    #[test]
    fn ablations_change_layout() {
        let ds = small();
        let base = FeaturizerConfig::default();
        let full = Featurizer::fit(&ds, &base).unwrap();
        let text = Featurizer::fit(&ds, &base.text_only()).unwrap();
        let st = Featurizer::fit(&ds, &base.structured_only()).unwrap();
        assert_eq!(text.dim(), 5);
        assert_eq!(st.dim(), 6);
        assert_ne!(full.layout_hash(), text.layout_hash());
        assert_ne!(full.layout_hash(), st.layout_hash());
        let none = FeaturizerConfig {
            text: TextProvider::None,
            structured: false,
            ..base
        };
        assert!(Featurizer::fit(&ds, &none).is_err());
    }

    #[test]
    fn external_embeddings_report_all_missing_ids() {
        let ds = small();
        let cfg = FeaturizerConfig {
            text: TextProvider::External { dim: 2 },
            ..Default::default()
        };
        let mut table = EmbeddingTable::default();
        table.insert("a".into(), vec![0.5, 0.5]).unwrap();
        let f = Featurizer::fit(&ds, &cfg)
            .unwrap()
            .with_embeddings(Arc::new(table))
            .unwrap();
        assert_eq!(f.featurize(&ds.records[0]).unwrap().dim(), 8);
        let mut c = ds.records[1].clone();
        c.record_id = "c".into();
        match f.featurize_all(&[ds.records[1].clone(), c]) {
            Err(Error::MissingEmbedding(ids)) => assert_eq!(ids, vec!["b", "c"]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn hashed_provider_is_deterministic() {
        let ds = small();
        let cfg = FeaturizerConfig {
            text: TextProvider::Hashed { dim: 16 },
            hash_seed: 5,
            ..Default::default()
        };
        let f = Featurizer::fit(&ds, &cfg).unwrap();
        assert_eq!(
            f.featurize(&ds.records[0]).unwrap(),
            f.featurize(&ds.records[0]).unwrap()
        );
        assert_eq!(f.dim(), 22);
    }
}
