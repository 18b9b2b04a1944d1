//! Train / score / evaluate over datasets, and the saved model artifact.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::allocator::ScoredCandidate;
use crate::data::{Dataset, DistrictRecord, Group};
use crate::error::{Error, Result};
use crate::fairness::{apply_thresholds, calibrate_group_thresholds, positive_rates, GroupThresholds};
use crate::features::{Featurizer, FeaturizerConfig};
use crate::metrics::{confusion, pr_curve, roc_auc, roc_curve, ConfusionMatrix, PrPoint, RocPoint};
use crate::model::{train_features, ClassifierParams, TrainConfig, TrainHistory};
use crate::text::EmbeddingTable;

pub const ARTIFACT_FORMAT_VERSION: u32 = 1;
pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// Everything needed to score new records: fitted featurizer, weights, and
/// decision thresholds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelArtifact {
    pub format_version: u32,
    pub featurizer: Featurizer,
    pub params: ClassifierParams,
    pub train_config: TrainConfig,
    pub thresholds: GroupThresholds,
}

impl ModelArtifact {
    /// Check that weights and featurizer agree on the input layout.
    pub fn validate(&self) -> Result<()> {
        if self.format_version != ARTIFACT_FORMAT_VERSION {
            return Err(Error::InvalidConfig(format!(
                "unsupported artifact format_version {}",
                self.format_version
            )));
        }
        self.params.validate()?;
        let actual = self.featurizer.layout_hash();
        if self.params.layout_hash != actual {
            return Err(Error::LayoutMismatch {
                expected: self.params.layout_hash,
                actual,
            });
        }
        if self.params.input_dim != self.featurizer.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.params.input_dim,
                actual: self.featurizer.dim(),
            });
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(crate::json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let a: ModelArtifact = serde_json::from_str(s)?;
        a.validate()?;
        Ok(a)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&s)
    }

    pub fn with_embeddings(mut self, table: Arc<EmbeddingTable>) -> Result<Self> {
        self.featurizer = self.featurizer.with_embeddings(table)?;
        Ok(self)
    }

    pub fn score(&self, record: &DistrictRecord) -> Result<f64> {
        self.params.forward(&self.featurizer.featurize(record)?)
    }

    pub fn score_all(&self, records: &[DistrictRecord]) -> Result<Vec<f64>> {
        self.featurizer
            .featurize_all(records)?
            .iter()
            .map(|x| self.params.forward(x))
            .collect()
    }
}

pub fn train(
    train: &Dataset,
    features: &FeaturizerConfig,
    cfg: &TrainConfig,
    embeddings: Option<Arc<EmbeddingTable>>,
) -> Result<(ModelArtifact, TrainHistory)> {
    let mut featurizer = Featurizer::fit(train, features)?;
    if let Some(t) = embeddings {
        featurizer = featurizer.with_embeddings(t)?;
    }
    let ys = train.labels()?;
    let xs = featurizer.featurize_all(&train.records)?;
    let (params, history) = train_features(&xs, &ys, &train.groups(), featurizer.layout_hash(), cfg)?;
    let artifact = ModelArtifact {
        format_version: ARTIFACT_FORMAT_VERSION,
        featurizer,
        params,
        train_config: cfg.clone(),
        thresholds: GroupThresholds::uniform(DEFAULT_THRESHOLD, 0.0),
    };
    Ok((artifact, history))
}

/// Hard decisions at one set of thresholds and their metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionSummary {
    pub thresholds: GroupThresholds,
    pub confusion: ConfusionMatrix,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub positive_rates: BTreeMap<Group, f64>,
    pub parity_gap: f64,
}

fn summarize(scores: &[f64], y: &[u8], groups: &[Group], th: &GroupThresholds) -> Result<DecisionSummary> {
    let d = apply_thresholds(scores, groups, th)?;
    let cm = confusion(y, &d)?;
    let rates = positive_rates(&d, groups)?;
    Ok(DecisionSummary {
        thresholds: th.clone(),
        confusion: cm,
        accuracy: cm.accuracy(),
        precision: cm.precision(),
        recall: cm.recall(),
        f1: cm.f1(),
        parity_gap: (rates[&Group::Rural] - rates[&Group::Urban]).abs(),
        positive_rates: rates,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub arch: String,
    pub n: usize,
    pub prevalence: f64,
    pub roc_auc: f64,
    pub average_precision: f64,
    /// Decisions at the artifact's thresholds.
    pub decisions: DecisionSummary,
    /// Decisions after group-threshold calibration on this set, when requested.
    pub calibrated: Option<DecisionSummary>,
    pub roc: Vec<RocPoint>,
    pub pr: Vec<PrPoint>,
}

impl EvaluationReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(crate::json::to_string_pretty(self)? + "\n")
    }
}

/// Score a labeled set and compute the full report. With `target_gap`,
/// thresholds are also calibrated on this set's scores and groups (labels are
/// not consulted, so the same step works on unlabeled decision batches).
pub fn evaluate(artifact: &ModelArtifact, ds: &Dataset, target_gap: Option<f64>) -> Result<EvaluationReport> {
    let y = ds.labels()?;
    if !(y.contains(&0) && y.contains(&1)) {
        return Err(Error::SingleClass("evaluation set needs both classes"));
    }
    let scores = artifact.score_all(&ds.records)?;
    let groups = ds.groups();
    let decisions = summarize(&scores, &y, &groups, &artifact.thresholds)?;
    let calibrated = match target_gap {
        Some(t) => {
            let paired: Vec<(f64, Group)> = scores.iter().copied().zip(groups.iter().copied()).collect();
            let base = artifact.thresholds.get(Group::Rural)?;
            let th = calibrate_group_thresholds(&paired, None, t, base)?;
            Some(summarize(&scores, &y, &groups, &th)?)
        }
        None => None,
    };
    let (pr, ap) = pr_curve(&scores, &y)?;
    Ok(EvaluationReport {
        arch: artifact.params.arch.name().to_string(),
        n: y.len(),
        prevalence: y.iter().filter(|&&v| v == 1).count() as f64 / y.len() as f64,
        roc_auc: roc_auc(&scores, &y)?,
        average_precision: ap,
        decisions,
        calibrated,
        roc: roc_curve(&scores, &y)?,
        pr,
    })
}

/// Allocation candidates from model scores, in dataset order.
pub fn scored_candidates(artifact: &ModelArtifact, ds: &Dataset) -> Result<Vec<ScoredCandidate>> {
    let scores = artifact.score_all(&ds.records)?;
    Ok(ds
        .records
        .iter()
        .zip(scores)
        .map(|(r, score)| ScoredCandidate {
            record_id: r.record_id.clone(),
            score,
            group: r.group,
            cost: r.cost,
            population: None,
        })
        .collect())
}
