//! Hard demographic-parity metric and post-hoc per-group threshold calibration.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::Group;
use crate::error::{Error, Result};

/// Positive-decision rate per group. Errors if either group is empty.
pub fn positive_rates(decisions: &[u8], groups: &[Group]) -> Result<BTreeMap<Group, f64>> {
    if decisions.len() != groups.len() {
        return Err(Error::DimensionMismatch {
            expected: decisions.len(),
            actual: groups.len(),
        });
    }
    let mut counts: BTreeMap<Group, (usize, usize)> = BTreeMap::new();
    for (&d, &g) in decisions.iter().zip(groups) {
        let c = counts.entry(g).or_default();
        c.0 += (d == 1) as usize;
        c.1 += 1;
    }
    Group::ALL
        .iter()
        .map(|&g| match counts.get(&g) {
            Some(&(pos, n)) if n > 0 => Ok((g, pos as f64 / n as f64)),
            _ => Err(Error::EmptyGroup(g)),
        })
        .collect()
}

/// `|P(d = 1 | rural) - P(d = 1 | urban)|`.
pub fn demographic_parity_difference(decisions: &[u8], groups: &[Group]) -> Result<f64> {
    let rates = positive_rates(decisions, groups)?;
    Ok((rates[&Group::Rural] - rates[&Group::Urban]).abs())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupThresholds {
    pub thresholds: BTreeMap<Group, f64>,
    pub target_gap: f64,
}

impl GroupThresholds {
    pub fn uniform(threshold: f64, target_gap: f64) -> Self {
        GroupThresholds {
            thresholds: Group::ALL.iter().map(|&g| (g, threshold)).collect(),
            target_gap,
        }
    }

    pub fn get(&self, g: Group) -> Result<f64> {
        self.thresholds
            .get(&g)
            .copied()
            .ok_or_else(|| Error::InvalidConfig(format!("no threshold for group {g}")))
    }
}

/// `1` iff score >= the group's threshold.
pub fn apply_thresholds(scores: &[f64], groups: &[Group], th: &GroupThresholds) -> Result<Vec<u8>> {
    if scores.len() != groups.len() {
        return Err(Error::DimensionMismatch {
            expected: scores.len(),
            actual: groups.len(),
        });
    }
    scores
        .iter()
        .zip(groups)
        .map(|(&s, &g)| Ok((s >= th.get(g)?) as u8))
        .collect()
}

struct Candidate {
    threshold: f64,
    gap: f64,
    correct: Option<usize>,
}

/// Keep the higher-rate group at `base_threshold` and sweep the other group's
/// threshold over its distinct scores.
///
/// Among sweep points whose gap is within `target_gap` the one closest to the
/// target wins (the smallest intervention); if none reaches the target, the
/// smallest gap wins. Remaining ties go to higher accuracy when `labels` are
/// given, then to the threshold nearest `base_threshold`.
pub fn calibrate_group_thresholds(
    scores: &[(f64, Group)],
    labels: Option<&[u8]>,
    target_gap: f64,
    base_threshold: f64,
) -> Result<GroupThresholds> {
    if !(0.0..1.0).contains(&target_gap) {
        return Err(Error::InvalidConfig(format!(
            "target_gap {target_gap} must lie in [0, 1)"
        )));
    }
    if !(base_threshold > 0.0 && base_threshold < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "base_threshold {base_threshold} must lie in (0, 1)"
        )));
    }
    if let Some(l) = labels {
        if l.len() != scores.len() {
            return Err(Error::DimensionMismatch {
                expected: scores.len(),
                actual: l.len(),
            });
        }
    }
    let groups: Vec<Group> = scores.iter().map(|s| s.1).collect();
    let base_decisions: Vec<u8> = scores.iter().map(|s| (s.0 >= base_threshold) as u8).collect();
    let rates = positive_rates(&base_decisions, &groups)?;
    let base = GroupThresholds::uniform(base_threshold, target_gap);
    if (rates[&Group::Rural] - rates[&Group::Urban]).abs() <= target_gap {
        return Ok(base);
    }

    let advantaged = if rates[&Group::Rural] >= rates[&Group::Urban] {
        Group::Rural
    } else {
        Group::Urban
    };
    let swept = advantaged.other();
    let adv_rate = rates[&advantaged];

    // fixed part of the accuracy count: the advantaged group at the base threshold
    let adv_correct = labels.map(|l| {
        scores
            .iter()
            .zip(l)
            .zip(&base_decisions)
            .filter(|(((_, g), &y), &d)| *g == advantaged && y == d)
            .count()
    });

    let mut members: Vec<(f64, u8)> = scores
        .iter()
        .enumerate()
        .filter(|(_, s)| s.1 == swept)
        .map(|(i, s)| (s.0, labels.map_or(0, |l| l[i])))
        .collect();
    members.sort_by(|a, b| a.0.total_cmp(&b.0));
    let n = members.len();
    let mut pos_prefix = Vec::with_capacity(n + 1);
    pos_prefix.push(0usize);
    for m in &members {
        pos_prefix.push(pos_prefix.last().unwrap() + (m.1 == 1) as usize);
    }
    let total_pos = pos_prefix[n];

    let evaluate = |threshold: f64| -> Candidate {
        // members[cut..] are predicted positive
        let cut = members.partition_point(|m| m.0 < threshold);
        let rate = (n - cut) as f64 / n as f64;
        let correct = adv_correct.map(|c| c + (total_pos - pos_prefix[cut]) + (cut - pos_prefix[cut]));
        Candidate {
            threshold,
            gap: (adv_rate - rate).abs(),
            correct,
        }
    };

    let mut candidates: Vec<Candidate> = vec![evaluate(base_threshold)];
    let mut last = f64::NAN;
    for &(s, _) in &members {
        if s != last && s > 0.0 && s < 1.0 {
            candidates.push(evaluate(s));
        }
        last = s;
    }

    let any_feasible = candidates.iter().any(|c| c.gap <= target_gap);
    let best = candidates
        .iter()
        .filter(|c| !any_feasible || c.gap <= target_gap)
        .min_by(|a, b| {
            (a.gap - target_gap)
                .abs()
                .total_cmp(&(b.gap - target_gap).abs())
                .then_with(|| b.correct.cmp(&a.correct))
                .then_with(|| {
                    (a.threshold - base_threshold)
                        .abs()
                        .total_cmp(&(b.threshold - base_threshold).abs())
                })
        })
        .expect("candidate list always holds the base threshold");

    let mut out = base;
    out.thresholds.insert(swept, best.threshold);
    Ok(out)
}
