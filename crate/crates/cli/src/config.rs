//! The run configuration: one strict JSON document.
//!
//! Precedence is built-in defaults < config file < command-line flags. The
//! top-level `seed` is the only seed; it is copied into the generator, the
//! trainer, the split and the hashing featurizer, so nested seed keys are
//! rejected instead of silently losing to it.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use foodsec_core::allocator::{Solver, UtilityMode};
use foodsec_core::features::FeaturizerConfig;
use foodsec_core::model::TrainConfig;
use foodsec_core::synth::SynthConfig;
use foodsec_core::{Error, Group, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub synth: SynthConfig,
    pub features: FeaturizerConfig,
    pub train: TrainConfig,
    pub split: SplitConfig,
    pub calibration: CalibrationConfig,
    pub allocation: AllocationConfig,
    pub paths: PathsConfig,
    pub service: ServiceConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 42,
            out: PathBuf::from("out"),
            synth: SynthConfig::default(),
            features: FeaturizerConfig::default(),
            train: TrainConfig::default(),
            split: SplitConfig::default(),
            calibration: CalibrationConfig::default(),
            allocation: AllocationConfig::default(),
            paths: PathsConfig::default(),
            service: ServiceConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub train_fraction: f64,
    pub stratify: bool,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            train_fraction: 0.8,
            stratify: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationConfig {
    /// Parity target for post-hoc group thresholds; null disables it.
    pub target_gap: Option<f64>,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        CalibrationConfig { target_gap: Some(0.03) }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AllocationConfig {
    pub budget: f64,
    pub floors: BTreeMap<Group, usize>,
    pub solver: Solver,
    pub utility_mode: UtilityMode,
    pub cost_resolution: Option<f64>,
}

/// Input files; each defaults to a fixed name under `out`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub data: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub report: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub lexicon: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub bind: String,
    pub port: u16,
    pub cors_origin: Option<String>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            bind: "127.0.0.1".into(),
            port: 8080,
            cors_origin: Some("http://localhost:5173".into()),
        }
    }
}

const NESTED_SEEDS: [(&str, &str); 3] = [("synth", "seed"), ("train", "seed"), ("features", "hash_seed")];

impl RunConfig {
    pub fn parse(json: &str) -> Result<Self> {
        let value: serde_json::Value =
            serde_json::from_str(json).map_err(|e| Error::InvalidConfig(format!("config is not valid JSON: {e}")))?;
        for (section, key) in NESTED_SEEDS {
            if value.get(section).and_then(|s| s.get(key)).is_some() {
                return Err(Error::InvalidConfig(format!(
                    "`{section}.{key}` is not allowed; set the top-level `seed` instead"
                )));
            }
        }
        let cfg: RunConfig = serde_path_to_error::deserialize(value).map_err(|e| {
            let path = e.path().to_string();
            Error::InvalidConfig(format!("config key `{path}`: {}", e.into_inner()))
        })?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::InvalidConfig(m) => Error::InvalidConfig(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Push the single seed everywhere it is consumed and check ranges.
    pub fn finish(mut self) -> Result<Self> {
        self.synth.seed = self.seed;
        self.train.seed = self.seed;
        self.features.hash_seed = self.seed;
        let f = self.split.train_fraction;
        if !(f > 0.0 && f < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "split.train_fraction = {f} must lie in (0, 1)"
            )));
        }
        if let Some(t) = self.calibration.target_gap {
            if !(0.0..1.0).contains(&t) {
                return Err(Error::InvalidConfig(format!(
                    "calibration.target_gap = {t} must lie in [0, 1)"
                )));
            }
        }
        self.synth.validate()?;
        self.train.validate()?;
        Ok(self)
    }

    pub fn data_path(&self) -> PathBuf {
        self.paths.data.clone().unwrap_or_else(|| self.out.join("data.csv"))
    }

    pub fn model_path(&self) -> PathBuf {
        self.paths.model.clone().unwrap_or_else(|| self.out.join("model.json"))
    }

    pub fn report_path(&self) -> PathBuf {
        self.paths
            .report
            .clone()
            .unwrap_or_else(|| self.out.join("report.json"))
    }

    pub fn embeddings_path(&self) -> PathBuf {
        self.paths
            .embeddings
            .clone()
            .unwrap_or_else(|| self.out.join("embeddings.jsonl"))
    }
}

/// `rural=3,urban=2`
pub fn parse_floors(spec: &str) -> Result<BTreeMap<Group, usize>> {
    let mut floors = BTreeMap::new();
    for part in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let bad = || Error::InvalidConfig(format!("floor `{part}` should look like rural=3"));
        let (g, n) = part.split_once('=').ok_or_else(bad)?;
        let group = match g.trim() {
            "rural" => Group::Rural,
            "urban" => Group::Urban,
            _ => return Err(bad()),
        };
        floors.insert(group, n.trim().parse().map_err(|_| bad())?);
    }
    Ok(floors)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_named() {
        let e = RunConfig::parse(r#"{"synth": {"n_sampels": 10}}"#)
            .unwrap_err()
            .to_string();
        assert!(e.contains("synth.n_sampels"), "{e}");
        let e = RunConfig::parse(r#"{"train": {"lambda": "high"}}"#)
            .unwrap_err()
            .to_string();
        assert!(e.contains("train.lambda"), "{e}");
    }

    #[test]
    fn nested_seeds_are_rejected() {
        let e = RunConfig::parse(r#"{"train": {"seed": 3}}"#).unwrap_err().to_string();
        assert!(e.contains("train.seed"), "{e}");
    }

    #[test]
    fn seed_reaches_every_consumer() {
        let cfg = RunConfig::parse(r#"{"seed": 9}"#).unwrap().finish().unwrap();
        assert_eq!((cfg.synth.seed, cfg.train.seed, cfg.features.hash_seed), (9, 9, 9));
    }

    #[test]
    fn floors_parse() {
        let f = parse_floors("rural=3, urban=0").unwrap();
        assert_eq!(f[&Group::Rural], 3);
        assert_eq!(f[&Group::Urban], 0);
        assert!(parse_floors("north=1").is_err());
        assert!(parse_floors("rural=-1").is_err());
    }
}
