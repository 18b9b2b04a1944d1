//! Food-insecurity risk scoring and intervention allocation.
//!
//! Text and socio-economic indicators are fused into one feature vector, a
//! classifier with an optional demographic-parity penalty scores each district
//! record, and an exact knapsack solver picks interventions under a budget and
//! per-group floors.

pub mod allocator;
pub mod data;
pub mod error;
pub mod fairness;
pub mod features;
pub mod fuse;
pub mod json;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod synth;
pub mod text;

pub use data::{Dataset, DistrictRecord, FeatureVector, Group, IndicatorSet};
pub use error::{Error, Result};
