//! Browser demo: score a hand-edited record and run the allocator on an
//! editable candidate table. Everything runs client-side.
//!
//! The JS-facing functions take and return JSON strings; errors come back as
//! `{"error": "..."}` so the page can show them inline.

use std::cell::OnceCell;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use wasm_bindgen::prelude::*;

use foodsec_core::allocator::{solve_dp, solve_greedy, AllocationProblem, AllocationResult, Candidate};
use foodsec_core::features::{FeaturizerConfig, TextProvider};
use foodsec_core::model::{Arch, TrainConfig};
use foodsec_core::pipeline::{train, ModelArtifact};
use foodsec_core::synth::{generate, SynthConfig};
use foodsec_core::{json, DistrictRecord, Group, Result};

thread_local! {
    static MODEL: OnceCell<ModelArtifact> = const { OnceCell::new() };
}

/// A small logistic model on a seeded synthetic set, trained on first use
/// (well under a second) instead of shipping weights.
pub fn demo_model() -> Result<ModelArtifact> {
    let ds = generate(&SynthConfig {
        n_samples: 600,
        n_districts: 12,
        ..Default::default()
    })?;
    let features = FeaturizerConfig {
        text: TextProvider::Tfidf { max_features: 300 },
        ..Default::default()
    };
    let cfg = TrainConfig {
        arch: Arch::Logistic,
        lambda: 0.0,
        epochs: 60,
        ..Default::default()
    };
    Ok(train(&ds, &features, &cfg, None)?.0)
}

fn with_model<T>(f: impl FnOnce(&ModelArtifact) -> Result<T>) -> Result<T> {
    MODEL.with(|cell| {
        if cell.get().is_none() {
            let _ = cell.set(demo_model()?);
        }
        f(cell.get().expect("model initialised above"))
    })
}

#[derive(Serialize)]
struct Scored {
    score: f64,
    threshold: f64,
    insecure: bool,
}

pub fn score_record_json(record: &str) -> Result<String> {
    let mut r: DistrictRecord = serde_json::from_str(record)?;
    r.label = None;
    r.validate(u32::MAX)?;
    with_model(|m| {
        let score = m.score(&r)?;
        let threshold = m.thresholds.get(r.group)?;
        Ok(json::to_string(&Scored {
            score,
            threshold,
            insecure: score >= threshold,
        })?)
    })
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Table {
    candidates: Vec<Candidate>,
    budget: f64,
    #[serde(default)]
    floors: BTreeMap<Group, usize>,
    #[serde(default)]
    cost_resolution: Option<f64>,
}

impl Table {
    fn problem(self) -> AllocationProblem {
        AllocationProblem {
            candidates: self.candidates,
            budget: self.budget,
            floors: self.floors,
            cost_resolution: self.cost_resolution,
        }
    }
}

pub fn allocate_json(table: &str) -> Result<String> {
    let p = serde_json::from_str::<Table>(table)?.problem();
    Ok(json::to_string(&solve_dp(&p)?)?)
}

#[derive(Serialize)]
struct Comparison {
    dp: AllocationResult,
    greedy: AllocationResult,
    /// How much utility greedy leaves on the table.
    gap: f64,
}

pub fn compare_json(table: &str) -> Result<String> {
    let p = serde_json::from_str::<Table>(table)?.problem();
    let (dp, greedy) = (solve_dp(&p)?, solve_greedy(&p)?);
    let gap = dp.total_utility - greedy.total_utility;
    Ok(json::to_string(&Comparison { dp, greedy, gap })?)
}

fn respond(r: Result<String>) -> String {
    r.unwrap_or_else(|e| serde_json::json!({ "error": e.to_string() }).to_string())
}

#[wasm_bindgen]
pub fn score_record(record: &str) -> String {
    respond(score_record_json(record))
}

#[wasm_bindgen]
pub fn allocate(table: &str) -> String {
    respond(allocate_json(table))
}

#[wasm_bindgen]
pub fn compare(table: &str) -> String {
    respond(compare_json(table))
}

/// A record from the demo's own synthetic set, for the editor to start from.
#[wasm_bindgen]
pub fn sample_record() -> String {
    respond((|| {
        let ds = generate(&SynthConfig {
            n_samples: 20,
            n_districts: 4,
            seed: 7,
            ..Default::default()
        })?;
        let mut r = ds.records[0].clone();
        r.label = None;
        Ok(json::to_string_pretty(&r)?)
    })())
}
