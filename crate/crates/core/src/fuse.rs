//! Min-Max scaling of structured indicators and concatenation with text vectors.

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, FeatureVector, IndicatorSet};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureRange {
    pub min: f64,
    pub max: f64,
}

/// Per-indicator ranges, in [`IndicatorSet::NAMES`] order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationSpec {
    pub ranges: Vec<FeatureRange>,
}

pub fn fit_minmax(ds: &Dataset) -> Result<NormalizationSpec> {
    let first = ds.records.first().ok_or(Error::Empty("min-max fit dataset"))?;
    let mut ranges: Vec<FeatureRange> = first
        .indicators
        .to_array()
        .iter()
        .map(|&v| FeatureRange { min: v, max: v })
        .collect();
    for r in &ds.records[1..] {
        for (range, v) in ranges.iter_mut().zip(r.indicators.to_array()) {
            range.min = range.min.min(v);
            range.max = range.max.max(v);
        }
    }
    Ok(NormalizationSpec { ranges })
}

/// Scale into [0, 1]; out-of-range values are clamped and constant features map to 0.
pub fn apply_minmax(spec: &NormalizationSpec, ind: &IndicatorSet) -> Vec<f64> {
    spec.ranges
        .iter()
        .zip(ind.to_array())
        .map(|(r, v)| {
            let span = r.max - r.min;
            if span <= 0.0 {
                0.0
            } else {
                ((v - r.min) / span).clamp(0.0, 1.0)
            }
        })
        .collect()
}

/// `[text ‖ structured]`; the text segment always comes first.
pub fn fuse_features(text_vec: &[f64], structured_vec: &[f64]) -> Result<FeatureVector> {
    if text_vec.iter().chain(structured_vec).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("fusion input"));
    }
    let mut values = Vec::with_capacity(text_vec.len() + structured_vec.len());
    values.extend_from_slice(text_vec);
    values.extend_from_slice(structured_vec);
    FeatureVector::new(values)
}
