//! Classification metrics with class 1 (food insecure) as the positive class.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl ConfusionMatrix {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn accuracy(&self) -> f64 {
        ratio(self.tp + self.tn, self.total())
    }

    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    /// 0 when precision + recall is 0.
    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a == 0 {
        return Err(Error::Empty("evaluation input"));
    }
    if a != b {
        return Err(Error::DimensionMismatch { expected: a, actual: b });
    }
    Ok(())
}

pub fn confusion(y: &[u8], decisions: &[u8]) -> Result<ConfusionMatrix> {
    check_lengths(y.len(), decisions.len())?;
    let mut cm = ConfusionMatrix::default();
    for (&t, &d) in y.iter().zip(decisions) {
        match (t == 1, d == 1) {
            (true, true) => cm.tp += 1,
            (false, true) => cm.fp += 1,
            (false, false) => cm.tn += 1,
            (true, false) => cm.fn_ += 1,
        }
    }
    Ok(cm)
}

/// Indices sorted by descending score.
fn descending(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    idx
}

/// Walk distinct score levels from the highest down, yielding
/// `(threshold, true positives, false positives)` after each level.
fn cumulative_counts(scores: &[f64], y: &[u8]) -> Vec<(f64, usize, usize)> {
    let order = descending(scores);
    let mut out = Vec::new();
    let (mut tp, mut fp) = (0, 0);
    let mut i = 0;
    while i < order.len() {
        let level = scores[order[i]];
        while i < order.len() && scores[order[i]] == level {
            if y[order[i]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        out.push((level, tp, fp));
    }
    out
}

fn class_counts(y: &[u8]) -> (usize, usize) {
    let pos = y.iter().filter(|&&t| t == 1).count();
    (pos, y.len() - pos)
}

fn check_scores(scores: &[f64]) -> Result<()> {
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::NonFinite("scores"));
    }
    Ok(())
}

/// Probability that a random positive outranks a random negative, ties
/// counting one half (Mann-Whitney statistic with midranks).
pub fn roc_auc(scores: &[f64], y: &[u8]) -> Result<f64> {
    check_lengths(scores.len(), y.len())?;
    check_scores(scores)?;
    let (pos, neg) = class_counts(y);
    if pos == 0 || neg == 0 {
        return Err(Error::SingleClass("roc_auc needs both classes"));
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut pos_rank_sum = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j < idx.len() && scores[idx[j]] == scores[idx[i]] {
            j += 1;
        }
        // ranks i+1 ..= j share their mean
        let mid = (i + 1 + j) as f64 / 2.0;
        let tied_pos = idx[i..j].iter().filter(|&&k| y[k] == 1).count();
        pos_rank_sum += mid * tied_pos as f64;
        i = j;
    }
    let (p, n) = (pos as f64, neg as f64);
    Ok((pos_rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    /// `None` for the (0, 0) origin, which lies above every score.
    pub threshold: Option<f64>,
    pub fpr: f64,
    pub tpr: f64,
}

/// ROC points from (0, 0) through every distinct threshold to (1, 1).
pub fn roc_curve(scores: &[f64], y: &[u8]) -> Result<Vec<RocPoint>> {
    check_lengths(scores.len(), y.len())?;
    check_scores(scores)?;
    let (pos, neg) = class_counts(y);
    if pos == 0 || neg == 0 {
        return Err(Error::SingleClass("roc_curve needs both classes"));
    }
    let mut pts = vec![RocPoint {
        threshold: None,
        fpr: 0.0,
        tpr: 0.0,
    }];
    pts.extend(cumulative_counts(scores, y).into_iter().map(|(t, tp, fp)| RocPoint {
        threshold: Some(t),
        fpr: fp as f64 / neg as f64,
        tpr: tp as f64 / pos as f64,
    }));
    Ok(pts)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
}

/// Precision/recall at every distinct threshold (descending) and the
/// step-wise average precision `sum (R_i - R_{i-1}) P_i`.
pub fn pr_curve(scores: &[f64], y: &[u8]) -> Result<(Vec<PrPoint>, f64)> {
    check_lengths(scores.len(), y.len())?;
    check_scores(scores)?;
    let (pos, _) = class_counts(y);
    if pos == 0 {
        return Err(Error::SingleClass("pr_curve needs at least one positive"));
    }
    let mut pts = Vec::new();
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (t, tp, fp) in cumulative_counts(scores, y) {
        let precision = tp as f64 / (tp + fp) as f64;
        let recall = tp as f64 / pos as f64;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
        pts.push(PrPoint {
            threshold: t,
            precision,
            recall,
        });
    }
    Ok((pts, ap))
}

pub fn roc_csv(points: &[RocPoint]) -> String {
    let mut out = String::from("fpr,tpr\n");
    for p in points {
        out.push_str(&format!("{},{}\n", p.fpr, p.tpr));
    }
    out
}

pub fn pr_csv(points: &[PrPoint]) -> String {
    let mut out = String::from("threshold,precision,recall\n");
    for p in points {
        out.push_str(&format!("{},{},{}\n", p.threshold, p.precision, p.recall));
    }
    out
}
