//! Seeded generator for district datasets.
//!
//! A latent severity `z` per record drives everything. It is the sum of a
//! district effect, a chronic part and an acute shock; the label is `z` above
//! its `(1 - positive_rate)` quantile. Survey indicators measure the district
//! and chronic parts, rainfall measures the size (not the sign) of the acute
//! shock, and report text is assembled from severity-banded phrases that
//! mostly describe the shock. Neither source alone sees all of `z`.
//! `bias_strength` shifts the chronic part upward for rural records.

use std::path::Path;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, DistrictRecord, Group, IndicatorSet};
use crate::error::{Error, Result};
use crate::text::{hash_embed, normalize_text, tokenize, EmbeddingTable, Stopwords};

const DISTRICT_EFFECT_SD: f64 = 0.5;
/// Distance between phrase band cut points, in units of `z`.
const BAND_WIDTH: f64 = 0.8;
const INDICATOR_NOISE: f64 = 0.4;
const PHRASE_NOISE: f64 = 0.4;
/// How much of the chronic situation leaks into report text.
const TEXT_CHRONIC_WEIGHT: f64 = 0.3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_samples: usize,
    pub n_districts: u32,
    pub positive_rate: f64,
    pub rural_fraction: f64,
    /// Upward shift of latent severity for rural records.
    pub bias_strength: f64,
    /// Severity error shared by all indicators of a record.
    pub noise_sigma: f64,
    /// Severity error shared by all phrases of a record's text.
    pub text_noise_sigma: f64,
    /// Error on the rainfall magnitude, which is remotely sensed and so
    /// independent of the survey error.
    pub rain_noise_sigma: f64,
    /// Share of rainfall shocks that are deficits rather than excess.
    pub drought_share: f64,
    /// Fraction of individual severity variance that is an acute shock
    /// rather than chronic.
    pub acute_share: f64,
    pub phrases_per_record: usize,
    /// Chance that a word gets an OCR-style 0/1 substitution.
    pub ocr_noise: f64,
    pub cost_min: f64,
    pub cost_max: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_samples: 2000,
            n_districts: 40,
            positive_rate: 0.35,
            rural_fraction: 0.6,
            bias_strength: 0.0,
            noise_sigma: 0.2,
            text_noise_sigma: 0.2,
            rain_noise_sigma: 0.5,
            drought_share: 0.75,
            acute_share: 0.5,
            phrases_per_record: 8,
            ocr_noise: 0.03,
            cost_min: 50.0,
            cost_max: 500.0,
            seed: 42,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        let open_unit = |v: f64| v > 0.0 && v < 1.0;
        if self.n_samples == 0 {
            return bad("n_samples must be >= 1".into());
        }
        if self.n_districts == 0 || self.n_districts as usize > self.n_samples {
            return bad(format!(
                "n_districts {} must be in [1, n_samples = {}]",
                self.n_districts, self.n_samples
            ));
        }
        if !open_unit(self.positive_rate) {
            return bad(format!("positive_rate {} must be in (0, 1)", self.positive_rate));
        }
        if !open_unit(self.rural_fraction) {
            return bad(format!("rural_fraction {} must be in (0, 1)", self.rural_fraction));
        }
        for (name, v) in [
            ("bias_strength", self.bias_strength),
            ("noise_sigma", self.noise_sigma),
            ("text_noise_sigma", self.text_noise_sigma),
            ("rain_noise_sigma", self.rain_noise_sigma),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} {v} must be finite and >= 0"));
            }
        }
        if !(0.0..=1.0).contains(&self.acute_share) {
            return bad(format!("acute_share {} must be in [0, 1]", self.acute_share));
        }
        if !(0.0..=1.0).contains(&self.drought_share) {
            return bad(format!("drought_share {} must be in [0, 1]", self.drought_share));
        }
        if !(0.0..=1.0).contains(&self.ocr_noise) {
            return bad(format!("ocr_noise {} must be in [0, 1]", self.ocr_noise));
        }
        if !(self.cost_min.is_finite() && self.cost_min >= 0.0 && self.cost_max >= self.cost_min) {
            return bad(format!(
                "cost range [{}, {}] must satisfy 0 <= cost_min <= cost_max",
                self.cost_min, self.cost_max
            ));
        }
        if !self.cost_max.is_finite() {
            return bad("cost_max must be finite".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LexiconBand {
    pub name: String,
    pub phrases: Vec<String>,
}

/// Severity-banded phrases, least severe band first. Fillers may contain
/// `{district}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Lexicon {
    pub bands: Vec<LexiconBand>,
    #[serde(default)]
    pub fillers: Vec<String>,
}

impl Lexicon {
    pub fn parse(json: &str) -> Result<Self> {
        let lex: Lexicon = serde_json::from_str(json)?;
        lex.validate()?;
        Ok(lex)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&s)
    }

    fn validate(&self) -> Result<()> {
        if self.bands.len() < 2 {
            return Err(Error::InvalidConfig("lexicon needs at least two bands".into()));
        }
        if let Some(b) = self.bands.iter().find(|b| b.phrases.is_empty()) {
            return Err(Error::InvalidConfig(format!(
                "lexicon band `{}` has no phrases",
                b.name
            )));
        }
        Ok(())
    }
}

impl Default for Lexicon {
    fn default() -> Self {
        Self::parse(include_str!("../data/lexicon.json")).expect("bundled lexicon is valid")
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn round_to(v: f64, places: i32) -> f64 {
    let s = 10f64.powi(places);
    (v * s).round() / s
}

pub fn district_name(id: u32) -> String {
    format!("district_{:02}", id + 1)
}

/// Rural districts are the first `round(rural_fraction * n_districts)` ids,
/// keeping at least one district per group when there are two or more.
pub fn district_group(cfg: &SynthConfig, district: u32) -> Group {
    let n = cfg.n_districts;
    let mut rural = (cfg.rural_fraction * n as f64).round() as u32;
    if n >= 2 {
        rural = rural.clamp(1, n - 1);
    }
    if district < rural {
        Group::Rural
    } else {
        Group::Urban
    }
}

fn ocr_garble(word: &str, rng: &mut ChaCha8Rng) -> String {
    word.chars()
        .map(|c| match c {
            'o' if rng.random_bool(0.5) => '0',
            'l' | 'i' if rng.random_bool(0.5) => '1',
            c => c,
        })
        .collect()
}

pub fn generate(cfg: &SynthConfig) -> Result<Dataset> {
    generate_with_lexicon(cfg, &Lexicon::default())
}

pub fn generate_with_lexicon(cfg: &SynthConfig, lexicon: &Lexicon) -> Result<Dataset> {
    cfg.validate()?;
    lexicon.validate()?;
    let n = cfg.n_samples;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");

    let mut effects: Vec<f64> = (0..cfg.n_districts)
        .map(|_| DISTRICT_EFFECT_SD * std_normal.sample(&mut rng))
        .collect();
    // centred within each group, so only bias_strength separates rural from urban
    for g in [Group::Rural, Group::Urban] {
        let members: Vec<usize> = (0..cfg.n_districts)
            .filter(|&d| district_group(cfg, d) == g)
            .map(|d| d as usize)
            .collect();
        let mean = members.iter().map(|&d| effects[d]).sum::<f64>() / members.len() as f64;
        for &d in &members {
            effects[d] -= mean;
        }
    }
    let districts: Vec<u32> = (0..n).map(|i| (i % cfg.n_districts as usize) as u32).collect();
    let groups: Vec<Group> = districts.iter().map(|&d| district_group(cfg, d)).collect();
    let (chronic_sd, acute_sd) = ((1.0 - cfg.acute_share).sqrt(), cfg.acute_share.sqrt());
    // district effect + chronic (including the rural shift), and the acute shock
    let base: Vec<f64> = (0..n)
        .map(|i| {
            let shift = if groups[i] == Group::Rural {
                cfg.bias_strength
            } else {
                0.0
            };
            effects[districts[i] as usize] + chronic_sd * std_normal.sample(&mut rng) + shift
        })
        .collect();
    let acute: Vec<f64> = (0..n).map(|_| acute_sd * std_normal.sample(&mut rng)).collect();
    let z: Vec<f64> = base.iter().zip(&acute).map(|(b, a)| b + a).collect();

    // exactly round(p * n) positives: the highest z values
    let labels = top_fraction(&z, cfg.positive_rate);
    // what each report's author perceives, with an error shared by all phrases
    let author: Vec<f64> = (0..n)
        .map(|i| acute[i] + TEXT_CHRONIC_WEIGHT * base[i] + cfg.text_noise_sigma * std_normal.sample(&mut rng))
        .collect();
    let cut = quantile_cut(&author, cfg.positive_rate);

    let n_bands = lexicon.bands.len();
    // cut points centred on the author-score cut so the middle boundary
    // separates reports that would call a district insecure
    let band_of = |v: f64| -> usize {
        let offset = (v - cut) / BAND_WIDTH + n_bands as f64 / 2.0;
        (offset.floor().max(0.0) as usize).min(n_bands - 1)
    };

    let mut records = Vec::with_capacity(n);
    for i in 0..n {
        // one survey error shared by all indicators of a record, plus a
        // per-indicator error
        let survey = cfg.noise_sigma * std_normal.sample(&mut rng);
        // drought or flood: only the magnitude tracks the shock
        let rain_obs = acute[i] / acute_sd.max(1e-9) + cfg.rain_noise_sigma * std_normal.sample(&mut rng);
        let rain_mag = 0.9 * (rain_obs + 1.5).max(0.0);
        let mut obs = |own: f64| base[i] + survey + own * std_normal.sample(&mut rng);
        let malnutrition = sigmoid(1.1 * obs(INDICATOR_NOISE) - 1.0);
        let yield_var = (0.4 * obs(INDICATOR_NOISE)).exp();
        let inflation = 5.0 + 3.0 * obs(INDICATOR_NOISE);
        let pds = sigmoid(0.8 - obs(INDICATOR_NOISE));
        let rural_offset = if groups[i] == Group::Rural { 0.25 } else { 0.0 };
        let vulnerability = 0.6 * obs(INDICATOR_NOISE) + rural_offset;
        let rain_sign = if rng.random_bool(cfg.drought_share) { -1.0 } else { 1.0 };
        let rain_jitter = 0.1 * std_normal.sample(&mut rng).abs();

        let indicators = IndicatorSet {
            malnutrition_rate: round_to(malnutrition, 4),
            crop_yield_variability: round_to(yield_var, 4),
            rainfall_deviation: round_to(rain_sign * (rain_mag + rain_jitter), 4),
            food_price_inflation: round_to(inflation, 3),
            pds_coverage: round_to(pds, 4),
            vulnerability_index: round_to(vulnerability, 4),
        };

        let mut parts = Vec::with_capacity(cfg.phrases_per_record + 1);
        if let Some(filler) = lexicon.fillers.choose(&mut rng) {
            parts.push(filler.replace("{district}", &district_name(districts[i])));
        }
        for _ in 0..cfg.phrases_per_record {
            let band = band_of(author[i] + PHRASE_NOISE * std_normal.sample(&mut rng));
            let phrase = lexicon.bands[band]
                .phrases
                .choose(&mut rng)
                .expect("validated non-empty");
            let words: Vec<String> = phrase
                .split(' ')
                .map(|w| {
                    if rng.random_bool(cfg.ocr_noise) {
                        ocr_garble(w, &mut rng)
                    } else {
                        w.to_string()
                    }
                })
                .collect();
            parts.push(words.join(" "));
        }
        let cost = if cfg.cost_max > cfg.cost_min {
            rng.random_range(cfg.cost_min..cfg.cost_max)
        } else {
            cfg.cost_min
        };

        records.push(DistrictRecord {
            record_id: format!("r{i:05}"),
            district_id: districts[i],
            group: groups[i],
            indicators,
            text: parts.join(". "),
            label: Some(labels[i]),
            cost: round_to(cost, 2),
        });
    }
    let names = (0..cfg.n_districts).map(district_name).collect();
    Dataset::new(records, cfg.n_districts, names)
}

/// Indicator of the `round(rate * n)` highest values (ties to the lower index).
fn top_fraction(v: &[f64], rate: f64) -> Vec<u8> {
    let n_pos = ((rate * v.len() as f64).round() as usize).min(v.len());
    let mut out = vec![0u8; v.len()];
    for &i in &descending_order(v)[..n_pos] {
        out[i] = 1;
    }
    out
}

fn descending_order(v: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[b].total_cmp(&v[a]).then(a.cmp(&b)));
    order
}

/// Midpoint between the last value inside the top `rate` share and the first
/// one outside it.
fn quantile_cut(v: &[f64], rate: f64) -> f64 {
    let n = v.len();
    let n_pos = ((rate * n as f64).round() as usize).min(n);
    let order = descending_order(v);
    match (n_pos, order.get(n_pos)) {
        (0, _) => v[order[0]],
        (_, Some(&below)) => 0.5 * (v[order[n_pos - 1]] + v[below]),
        (_, None) => v[order[n - 1]],
    }
}

/// Hashed text embeddings for every record, for exercising the external
/// embedding path without a real encoder.
pub fn hashed_embeddings(ds: &Dataset, dim: usize, seed: u64, stopwords: &Stopwords) -> Result<EmbeddingTable> {
    let mut table = EmbeddingTable::default();
    for r in &ds.records {
        let v = hash_embed(&tokenize(&normalize_text(&r.text), stopwords), dim, seed)?;
        table.insert(r.record_id.clone(), v)?;
    }
    Ok(table)
}
