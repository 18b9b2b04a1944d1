//! Domain records, the dataset container and its CSV + sidecar file format.

use std::collections::HashSet;
use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

pub const CSV_HEADER: [&str; 12] = [
    "record_id",
    "district_id",
    "group",
    "malnutrition_rate",
    "crop_yield_variability",
    "rainfall_deviation",
    "food_price_inflation",
    "pds_coverage",
    "vulnerability_index",
    "cost",
    "label",
    "text",
];

/// Sensitive attribute: rural or urban residence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Group {
    Rural,
    Urban,
}

impl Group {
    pub const ALL: [Group; 2] = [Group::Rural, Group::Urban];

    pub fn as_str(self) -> &'static str {
        match self {
            Group::Rural => "rural",
            Group::Urban => "urban",
        }
    }

    pub fn other(self) -> Group {
        match self {
            Group::Rural => Group::Urban,
            Group::Urban => Group::Rural,
        }
    }
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Group {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "rural" => Ok(Group::Rural),
            "urban" => Ok(Group::Urban),
            other => Err(Error::InvalidData(format!("unknown group `{other}`"))),
        }
    }
}

/// Structured socio-economic indicators for one observation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IndicatorSet {
    pub malnutrition_rate: f64,
    pub crop_yield_variability: f64,
    pub rainfall_deviation: f64,
    pub food_price_inflation: f64,
    pub pds_coverage: f64,
    pub vulnerability_index: f64,
}

impl IndicatorSet {
    pub const LEN: usize = 6;

    pub const NAMES: [&'static str; 6] = [
        "malnutrition_rate",
        "crop_yield_variability",
        "rainfall_deviation",
        "food_price_inflation",
        "pds_coverage",
        "vulnerability_index",
    ];

    pub fn to_array(&self) -> [f64; 6] {
        [
            self.malnutrition_rate,
            self.crop_yield_variability,
            self.rainfall_deviation,
            self.food_price_inflation,
            self.pds_coverage,
            self.vulnerability_index,
        ]
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in Self::NAMES.iter().zip(self.to_array()) {
            if !v.is_finite() {
                return Err(Error::InvalidData(format!("{name} is not finite")));
            }
        }
        for (name, v) in [
            ("malnutrition_rate", self.malnutrition_rate),
            ("pds_coverage", self.pds_coverage),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidData(format!("{name} = {v} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

/// One observation: indicators, document text, sensitive group, optional label and cost.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistrictRecord {
    pub record_id: String,
    pub district_id: u32,
    pub group: Group,
    pub indicators: IndicatorSet,
    pub text: String,
    /// 0 = food secure, 1 = food insecure.
    pub label: Option<u8>,
    pub cost: f64,
}

impl DistrictRecord {
    pub fn validate(&self, num_districts: u32) -> Result<()> {
        let ctx = |msg: String| Error::InvalidData(format!("record {}: {msg}", self.record_id));
        if let Some(l) = self.label {
            if l > 1 {
                return Err(ctx(format!("label {l} is not 0 or 1")));
            }
        }
        if !self.cost.is_finite() || self.cost < 0.0 {
            return Err(ctx(format!("cost {} must be finite and >= 0", self.cost)));
        }
        if self.district_id >= num_districts {
            return Err(ctx(format!(
                "district_id {} >= num_districts {num_districts}",
                self.district_id
            )));
        }
        self.indicators.validate().map_err(|e| ctx(e.to_string()))
    }
}

/// Sidecar metadata stored next to the dataset CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetMeta {
    pub schema_version: u32,
    pub num_districts: u32,
    #[serde(default)]
    pub district_names: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub records: Vec<DistrictRecord>,
    pub num_districts: u32,
    pub district_names: Vec<String>,
    pub schema_version: u32,
}

impl Dataset {
    pub fn new(records: Vec<DistrictRecord>, num_districts: u32, district_names: Vec<String>) -> Result<Self> {
        let ds = Dataset {
            records,
            num_districts,
            district_names,
            schema_version: SCHEMA_VERSION,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.district_names.is_empty() && self.district_names.len() != self.num_districts as usize {
            return Err(Error::InvalidData(format!(
                "{} district names for {} districts",
                self.district_names.len(),
                self.num_districts
            )));
        }
        let mut seen = HashSet::with_capacity(self.records.len());
        for r in &self.records {
            r.validate(self.num_districts)?;
            if !seen.insert(r.record_id.as_str()) {
                return Err(Error::InvalidData(format!("duplicate record_id {}", r.record_id)));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn district_name(&self, id: u32) -> String {
        self.district_names
            .get(id as usize)
            .cloned()
            .unwrap_or_else(|| format!("district-{id}"))
    }

    pub fn meta(&self) -> DatasetMeta {
        DatasetMeta {
            schema_version: self.schema_version,
            num_districts: self.num_districts,
            district_names: self.district_names.clone(),
        }
    }

    /// Keep the dataset metadata but replace the records.
    pub fn with_records(&self, records: Vec<DistrictRecord>) -> Dataset {
        Dataset {
            records,
            num_districts: self.num_districts,
            district_names: self.district_names.clone(),
            schema_version: self.schema_version,
        }
    }

    /// Labels of every record, failing with the ids of unlabeled ones.
    pub fn labels(&self) -> Result<Vec<u8>> {
        let missing: Vec<String> = self
            .records
            .iter()
            .filter(|r| r.label.is_none())
            .map(|r| r.record_id.clone())
            .collect();
        if !missing.is_empty() {
            return Err(Error::Unlabeled(missing));
        }
        Ok(self.records.iter().filter_map(|r| r.label).collect())
    }

    pub fn groups(&self) -> Vec<Group> {
        self.records.iter().map(|r| r.group).collect()
    }

    pub fn positive_rate(&self) -> Option<f64> {
        let labeled: Vec<u8> = self.records.iter().filter_map(|r| r.label).collect();
        if labeled.is_empty() {
            return None;
        }
        Some(labeled.iter().map(|&l| l as f64).sum::<f64>() / labeled.len() as f64)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new()
            .quote_style(csv::QuoteStyle::Necessary)
            .from_writer(writer);
        w.write_record(CSV_HEADER)?;
        for r in &self.records {
            let ind = &r.indicators;
            w.write_record([
                r.record_id.clone(),
                r.district_id.to_string(),
                r.group.to_string(),
                ind.malnutrition_rate.to_string(),
                ind.crop_yield_variability.to_string(),
                ind.rainfall_deviation.to_string(),
                ind.food_price_inflation.to_string(),
                ind.pds_coverage.to_string(),
                ind.vulnerability_index.to_string(),
                r.cost.to_string(),
                r.label.map(|l| l.to_string()).unwrap_or_default(),
                r.text.clone(),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }

    /// Parse records from CSV; metadata comes from the sidecar.
    pub fn read_csv<R: Read>(reader: R, meta: DatasetMeta) -> Result<Dataset> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let header = rdr.headers()?.clone();
        let actual: Vec<&str> = header.iter().collect();
        if actual != CSV_HEADER {
            let missing: Vec<&str> = CSV_HEADER.iter().filter(|h| !actual.contains(h)).copied().collect();
            return Err(Error::InvalidData(if missing.is_empty() {
                format!("unexpected header `{}`", actual.join(","))
            } else {
                format!("missing columns: {}", missing.join(", "))
            }));
        }
        let mut records = Vec::new();
        for (row, result) in rdr.records().enumerate() {
            let rec = result?;
            let line = row + 2;
            let num = |i: usize| -> Result<f64> {
                rec[i]
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| Error::InvalidData(format!("line {line}: column {}: {e}", CSV_HEADER[i])))
            };
            let label = match rec[10].trim() {
                "" => None,
                "0" => Some(0),
                "1" => Some(1),
                other => {
                    return Err(Error::InvalidData(format!(
                        "line {line}: label `{other}` is not 0, 1 or empty"
                    )))
                }
            };
            records.push(DistrictRecord {
                record_id: rec[0].to_string(),
                district_id: rec[1]
                    .trim()
                    .parse()
                    .map_err(|e| Error::InvalidData(format!("line {line}: column district_id: {e}")))?,
                group: rec[2].parse()?,
                indicators: IndicatorSet {
                    malnutrition_rate: num(3)?,
                    crop_yield_variability: num(4)?,
                    rainfall_deviation: num(5)?,
                    food_price_inflation: num(6)?,
                    pds_coverage: num(7)?,
                    vulnerability_index: num(8)?,
                },
                cost: num(9)?,
                label,
                text: rec[11].to_string(),
            });
        }
        let ds = Dataset {
            records,
            num_districts: meta.num_districts,
            district_names: meta.district_names,
            schema_version: meta.schema_version,
        };
        ds.validate()?;
        Ok(ds)
    }

    /// Write `<path>` and the sidecar `<path with .json extension>`.
    pub fn save(&self, csv_path: &Path) -> Result<()> {
        let f = File::create(csv_path).map_err(|e| Error::io(csv_path, e))?;
        self.write_csv(BufWriter::new(f))?;
        let side = sidecar_path(csv_path);
        let mut body = crate::json::to_string_pretty(&self.meta())?;
        body.push('\n');
        std::fs::write(&side, body).map_err(|e| Error::io(&side, e))?;
        Ok(())
    }

    pub fn load(csv_path: &Path) -> Result<Dataset> {
        let side = sidecar_path(csv_path);
        let meta_text = std::fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
        let meta: DatasetMeta = serde_json::from_str(&meta_text)?;
        let f = File::open(csv_path).map_err(|e| Error::io(csv_path, e))?;
        Dataset::read_csv(BufReader::new(f), meta)
    }
}

pub fn sidecar_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("json")
}

/// Partition `ds` into (train, holdout). Records keep their original relative order.
///
/// With `stratify`, each label class is shuffled and split separately so both
/// halves keep the parent's positive rate up to rounding.
pub fn split_dataset(ds: &Dataset, train_fraction: f64, seed: u64, stratify: bool) -> Result<(Dataset, Dataset)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "train_fraction {train_fraction} must lie strictly between 0 and 1"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut in_train = vec![false; ds.len()];

    let strata: Vec<Vec<usize>> = if stratify {
        ds.labels()?;
        let (pos, neg): (Vec<usize>, Vec<usize>) = (0..ds.len()).partition(|&i| ds.records[i].label == Some(1));
        if pos.is_empty() || neg.is_empty() {
            return Err(Error::SingleClass("stratified split needs both labels"));
        }
        vec![pos, neg]
    } else {
        vec![(0..ds.len()).collect()]
    };

    for mut idx in strata {
        idx.shuffle(&mut rng);
        let n = idx.len();
        let mut take = (train_fraction * n as f64).round() as usize;
        if n >= 2 {
            take = take.clamp(1, n - 1);
        }
        for &i in &idx[..take.min(n)] {
            in_train[i] = true;
        }
    }

    let (train, holdout): (Vec<_>, Vec<_>) = ds.records.iter().cloned().zip(in_train).partition(|(_, t)| *t);
    Ok((
        ds.with_records(train.into_iter().map(|(r, _)| r).collect()),
        ds.with_records(holdout.into_iter().map(|(r, _)| r).collect()),
    ))
}

/// Dense fused input vector for the classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub values: Vec<f64>,
}

impl FeatureVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("feature vector"));
        }
        Ok(FeatureVector { values })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }
}
