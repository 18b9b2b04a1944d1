//! Trainable classifier heads and the fairness-regularized objective.
//!
//! The objective is `L_cls + lambda * L_fair` where `L_cls` is binary
//! cross-entropy (hinge for the linear SVM) and `L_fair` is the absolute gap
//! between the groups' mean predicted probabilities, a differentiable stand-in
//! for the hard demographic-parity difference.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{FeatureVector, Group};
use crate::error::{Error, Result};

/// Probability clip used inside the log of the cross-entropy.
pub const PROB_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Arch {
    Logistic,
    LinearSvm,
    /// One tanh hidden layer, sigmoid output.
    Mlp {
        hidden: usize,
    },
}

impl Arch {
    pub fn name(&self) -> &'static str {
        match self {
            Arch::Logistic => "logistic",
            Arch::LinearSvm => "svm",
            Arch::Mlp { .. } => "mlp",
        }
    }
}

impl Default for Arch {
    fn default() -> Self {
        Arch::Mlp { hidden: 64 }
    }
}

impl std::str::FromStr for Arch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "logistic" => Ok(Arch::Logistic),
            "svm" | "linear_svm" => Ok(Arch::LinearSvm),
            "mlp" => Ok(Arch::default()),
            other => match other.strip_prefix("mlp:").map(str::parse) {
                Some(Ok(hidden)) if hidden > 0 => Ok(Arch::Mlp { hidden }),
                _ => Err(Error::InvalidConfig(format!(
                    "unknown arch `{other}` (expected logistic, svm, mlp or mlp:<hidden>)"
                ))),
            },
        }
    }
}

/// Fully connected layer, `weights[out][in]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
}

impl Dense {
    fn zeros(outputs: usize, inputs: usize) -> Self {
        Dense {
            weights: vec![vec![0.0; inputs]; outputs],
            bias: vec![0.0; outputs],
        }
    }

    fn uniform(outputs: usize, inputs: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / (inputs.max(1) as f64).sqrt();
        let mut d = Dense::zeros(outputs, inputs);
        for row in &mut d.weights {
            for w in row.iter_mut() {
                *w = rng.random_range(-bound..=bound);
            }
        }
        for b in &mut d.bias {
            *b = rng.random_range(-bound..=bound);
        }
        d
    }

    fn apply(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(
            self.weights
                .iter()
                .zip(&self.bias)
                .map(|(row, b)| row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + b),
        );
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierParams {
    pub arch: Arch,
    pub input_dim: usize,
    pub layout_hash: u64,
    pub layers: Vec<Dense>,
}

/// Gradient with the same layer shapes as the parameters it belongs to.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Dense>,
}

fn layer_shapes(arch: Arch, input_dim: usize) -> Vec<(usize, usize)> {
    match arch {
        Arch::Logistic | Arch::LinearSvm => vec![(1, input_dim)],
        Arch::Mlp { hidden } => vec![(hidden, input_dim), (1, hidden)],
    }
}

fn flatten(layers: &[Dense]) -> Vec<f64> {
    let mut out = Vec::new();
    for l in layers {
        for row in &l.weights {
            out.extend_from_slice(row);
        }
        out.extend_from_slice(&l.bias);
    }
    out
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl ClassifierParams {
    pub fn zeros(arch: Arch, input_dim: usize, layout_hash: u64) -> Self {
        ClassifierParams {
            arch,
            input_dim,
            layout_hash,
            layers: layer_shapes(arch, input_dim)
                .into_iter()
                .map(|(o, i)| Dense::zeros(o, i))
                .collect(),
        }
    }

    /// Uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    pub fn init(arch: Arch, input_dim: usize, layout_hash: u64, rng: &mut ChaCha8Rng) -> Self {
        ClassifierParams {
            arch,
            input_dim,
            layout_hash,
            layers: layer_shapes(arch, input_dim)
                .into_iter()
                .map(|(o, i)| Dense::uniform(o, i, rng))
                .collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let shapes = layer_shapes(self.arch, self.input_dim);
        let ok = shapes.len() == self.layers.len()
            && shapes.iter().zip(&self.layers).all(|(&(o, i), l)| {
                l.weights.len() == o && l.bias.len() == o && l.weights.iter().all(|r| r.len() == i)
            });
        if !ok {
            return Err(Error::InvalidConfig(format!(
                "parameter shapes do not match {:?} with input dim {}",
                self.arch, self.input_dim
            )));
        }
        if self.flat().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("classifier parameters"));
        }
        Ok(())
    }

    pub fn flat(&self) -> Vec<f64> {
        flatten(&self.layers)
    }

    pub fn set_flat(&mut self, values: &[f64]) {
        let mut it = values.iter().copied();
        for l in &mut self.layers {
            for row in &mut l.weights {
                for w in row.iter_mut() {
                    *w = it.next().expect("flat parameter vector too short");
                }
            }
            for b in &mut l.bias {
                *b = it.next().expect("flat parameter vector too short");
            }
        }
    }

    /// Pre-sigmoid output. Caller guarantees `x.len() == input_dim`.
    pub fn margin(&self, x: &[f64]) -> f64 {
        let mut buf = Vec::new();
        self.margin_with_hidden(x, &mut buf)
    }

    fn margin_with_hidden(&self, x: &[f64], hidden: &mut Vec<f64>) -> f64 {
        match self.arch {
            Arch::Logistic | Arch::LinearSvm => {
                let l = &self.layers[0];
                l.weights[0].iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + l.bias[0]
            }
            Arch::Mlp { .. } => {
                self.layers[0].apply(x, hidden);
                hidden.iter_mut().for_each(|h| *h = h.tanh());
                let out = &self.layers[1];
                out.weights[0]
                    .iter()
                    .zip(hidden.iter())
                    .map(|(w, h)| w * h)
                    .sum::<f64>()
                    + out.bias[0]
            }
        }
    }

    /// Predicted probability of class 1. For the SVM this is only a reporting
    /// transform of the margin.
    pub fn forward(&self, x: &FeatureVector) -> Result<f64> {
        if x.dim() != self.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim,
                actual: x.dim(),
            });
        }
        Ok(sigmoid(self.margin(&x.values)))
    }

    fn apply_update(&mut self, grad: &Gradients, lr: f64, l2: f64) {
        for (l, g) in self.layers.iter_mut().zip(&grad.layers) {
            for (row, grow) in l.weights.iter_mut().zip(&g.weights) {
                for (w, gw) in row.iter_mut().zip(grow) {
                    *w -= lr * (gw + l2 * *w);
                }
            }
            for (b, gb) in l.bias.iter_mut().zip(&g.bias) {
                *b -= lr * gb;
            }
        }
    }
}

impl Gradients {
    pub fn flat(&self) -> Vec<f64> {
        flatten(&self.layers)
    }

    pub fn norm(&self) -> f64 {
        self.flat().iter().map(|g| g * g).sum::<f64>().sqrt()
    }
}

pub fn bce_loss(yhat: &[f64], y: &[u8]) -> Result<f64> {
    check_batch(yhat.len(), y.len())?;
    let sum: f64 = yhat
        .iter()
        .zip(y)
        .map(|(&p, &t)| {
            let p = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
            if t == 1 {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum();
    Ok(sum / y.len() as f64)
}

/// Mean of `max(0, 1 - t * margin)` with `t = 2y - 1`.
pub fn hinge_loss(margins: &[f64], y: &[u8]) -> Result<f64> {
    check_batch(margins.len(), y.len())?;
    let sum: f64 = margins
        .iter()
        .zip(y)
        .map(|(&m, &t)| (1.0 - sign_of(t) * m).max(0.0))
        .sum();
    Ok(sum / y.len() as f64)
}

fn sign_of(label: u8) -> f64 {
    if label == 1 {
        1.0
    } else {
        -1.0
    }
}

fn check_batch(a: usize, b: usize) -> Result<()> {
    if a == 0 || b == 0 {
        return Err(Error::Empty("loss batch"));
    }
    if a != b {
        return Err(Error::DimensionMismatch { expected: a, actual: b });
    }
    Ok(())
}

/// Signed gap `mean(p | rural) - mean(p | urban)`, or `None` when a group is absent.
fn mean_prob_gap(yhat: &[f64], groups: &[Group]) -> Option<(f64, usize, usize)> {
    let (mut sr, mut nr, mut su, mut nu) = (0.0, 0usize, 0.0, 0usize);
    for (&p, &g) in yhat.iter().zip(groups) {
        match g {
            Group::Rural => {
                sr += p;
                nr += 1;
            }
            Group::Urban => {
                su += p;
                nu += 1;
            }
        }
    }
    if nr == 0 || nu == 0 {
        return None;
    }
    Some((sr / nr as f64 - su / nu as f64, nr, nu))
}

/// `|mean(p | rural) - mean(p | urban)|`; 0 (with a warning) when a group is absent.
pub fn parity_surrogate(yhat: &[f64], groups: &[Group]) -> f64 {
    match mean_prob_gap(yhat, groups) {
        Some((gap, _, _)) => gap.abs(),
        None => {
            log::warn!("parity surrogate: batch holds a single group; fairness term is 0");
            0.0
        }
    }
}

pub fn total_loss(yhat: &[f64], y: &[u8], groups: &[Group], lambda: f64) -> Result<f64> {
    Ok(bce_loss(yhat, y)? + lambda * parity_surrogate(yhat, groups))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossParts {
    pub cls: f64,
    pub fair: f64,
    pub total: f64,
}

/// Borrowed view of a labeled mini-batch.
#[derive(Debug, Clone, Copy)]
pub struct Batch<'a> {
    pub xs: &'a [&'a [f64]],
    pub ys: &'a [u8],
    pub groups: &'a [Group],
}

impl Batch<'_> {
    fn check(&self, input_dim: usize) -> Result<()> {
        check_batch(self.xs.len(), self.ys.len())?;
        check_batch(self.xs.len(), self.groups.len())?;
        if let Some(x) = self.xs.iter().find(|x| x.len() != input_dim) {
            return Err(Error::DimensionMismatch {
                expected: input_dim,
                actual: x.len(),
            });
        }
        Ok(())
    }
}

/// Objective value of `p` on a batch, evaluated from forward passes only.
pub fn objective(p: &ClassifierParams, batch: &Batch<'_>, lambda: f64) -> Result<LossParts> {
    batch.check(p.input_dim)?;
    let margins: Vec<f64> = batch.xs.iter().map(|x| p.margin(x)).collect();
    let probs: Vec<f64> = margins.iter().map(|&m| sigmoid(m)).collect();
    let cls = match p.arch {
        Arch::LinearSvm => hinge_loss(&margins, batch.ys)?,
        _ => bce_loss(&probs, batch.ys)?,
    };
    let fair = parity_surrogate(&probs, batch.groups);
    Ok(LossParts {
        cls,
        fair,
        total: cls + lambda * fair,
    })
}

/// Analytic gradient of [`objective`]'s total. The absolute value in the
/// fairness term uses the subgradient `sign(gap)`, 0 at a zero gap.
pub fn gradients(p: &ClassifierParams, batch: &Batch<'_>, lambda: f64) -> Result<Gradients> {
    batch.check(p.input_dim)?;
    let n = batch.xs.len() as f64;

    let mut hidden_acts: Vec<Vec<f64>> = Vec::with_capacity(batch.xs.len());
    let mut margins = Vec::with_capacity(batch.xs.len());
    for x in batch.xs {
        let mut h = Vec::new();
        margins.push(p.margin_with_hidden(x, &mut h));
        hidden_acts.push(h);
    }
    let probs: Vec<f64> = margins.iter().map(|&m| sigmoid(m)).collect();

    // d(loss)/d(margin) per sample
    let mut dmargin: Vec<f64> = margins
        .iter()
        .zip(&probs)
        .zip(batch.ys)
        .map(|((&m, &prob), &y)| match p.arch {
            Arch::LinearSvm => {
                let t = sign_of(y);
                if t * m < 1.0 {
                    -t / n
                } else {
                    0.0
                }
            }
            _ => {
                if !(PROB_EPS..=1.0 - PROB_EPS).contains(&prob) {
                    0.0
                } else {
                    (prob - y as f64) / n
                }
            }
        })
        .collect();

    if lambda != 0.0 {
        if let Some((gap, nr, nu)) = mean_prob_gap(&probs, batch.groups) {
            let s = if gap > 0.0 {
                1.0
            } else if gap < 0.0 {
                -1.0
            } else {
                0.0
            };
            for ((d, &prob), &g) in dmargin.iter_mut().zip(&probs).zip(batch.groups) {
                let share = match g {
                    Group::Rural => 1.0 / nr as f64,
                    Group::Urban => -1.0 / nu as f64,
                };
                *d += lambda * s * share * prob * (1.0 - prob);
            }
        }
    }

    let mut grad = Gradients {
        layers: layer_shapes(p.arch, p.input_dim)
            .into_iter()
            .map(|(o, i)| Dense::zeros(o, i))
            .collect(),
    };
    match p.arch {
        Arch::Logistic | Arch::LinearSvm => {
            let g = &mut grad.layers[0];
            for (x, &d) in batch.xs.iter().zip(&dmargin) {
                for (gw, v) in g.weights[0].iter_mut().zip(x.iter()) {
                    *gw += d * v;
                }
                g.bias[0] += d;
            }
        }
        Arch::Mlp { hidden } => {
            let w_out = &p.layers[1].weights[0];
            let (first, second) = grad.layers.split_at_mut(1);
            let (g_in, g_out) = (&mut first[0], &mut second[0]);
            let mut dpre = vec![0.0; hidden];
            for ((x, h), &d) in batch.xs.iter().zip(&hidden_acts).zip(&dmargin) {
                for (gw, hv) in g_out.weights[0].iter_mut().zip(h) {
                    *gw += d * hv;
                }
                g_out.bias[0] += d;
                for ((dp, w), hv) in dpre.iter_mut().zip(w_out).zip(h) {
                    *dp = d * w * (1.0 - hv * hv);
                }
                for ((row, b), &dp) in g_in.weights.iter_mut().zip(&mut g_in.bias).zip(&dpre) {
                    if dp != 0.0 {
                        for (gw, v) in row.iter_mut().zip(x.iter()) {
                            *gw += dp * v;
                        }
                    }
                    *b += dp;
                }
            }
        }
    }
    Ok(grad)
}

/// Worst relative disagreement between [`gradients`] and central finite
/// differences of [`objective`] with step `h`, over every parameter.
/// Denominators are floored at `1e-6` so near-zero entries compare absolutely.
pub fn gradient_check(p: &ClassifierParams, batch: &Batch<'_>, lambda: f64, h: f64) -> Result<f64> {
    let analytic = gradients(p, batch, lambda)?.flat();
    let base = p.flat();
    let mut probe = p.clone();
    let mut worst = 0.0f64;
    for (i, &a) in analytic.iter().enumerate() {
        let mut v = base.clone();
        v[i] = base[i] + h;
        probe.set_flat(&v);
        let up = objective(&probe, batch, lambda)?.total;
        v[i] = base[i] - h;
        probe.set_flat(&v);
        let down = objective(&probe, batch, lambda)?.total;
        let numeric = (up - down) / (2.0 * h);
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
        worst = worst.max(rel);
    }
    Ok(worst)
}

/// Surrogate for the fairness term. Only the mean-probability gap exists today.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FairnessSurrogate {
    #[default]
    MeanProbGap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub arch: Arch,
    pub lambda: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub l2: f64,
    pub fairness_surrogate: FairnessSurrogate,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            arch: Arch::default(),
            lambda: 1.0,
            learning_rate: 0.05,
            epochs: 200,
            batch_size: 64,
            seed: 42,
            l2: 1e-4,
            fairness_surrogate: FairnessSurrogate::MeanProbGap,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad("lambda must be finite and >= 0");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be > 0");
        }
        if self.epochs == 0 {
            return bad("epochs must be >= 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        if !(self.l2 >= 0.0 && self.l2.is_finite()) {
            return bad("l2 must be finite and >= 0");
        }
        if let Arch::Mlp { hidden: 0 } = self.arch {
            return bad("mlp hidden width must be >= 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss_cls: f64,
    pub loss_fair: f64,
    pub loss_total: f64,
    pub train_accuracy: f64,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochStats>,
}

impl TrainHistory {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,loss_cls,loss_fair,loss_total,train_acc,wall_seconds\n");
        for e in &self.epochs {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                e.epoch, e.loss_cls, e.loss_fair, e.loss_total, e.train_accuracy, e.wall_seconds
            ));
        }
        out
    }

    pub fn last(&self) -> Option<&EpochStats> {
        self.epochs.last()
    }
}

#[cfg(not(target_arch = "wasm32"))]
struct Stopwatch(std::time::Instant);

#[cfg(not(target_arch = "wasm32"))]
impl Stopwatch {
    fn start() -> Self {
        Stopwatch(std::time::Instant::now())
    }
    fn seconds(&self) -> f64 {
        self.0.elapsed().as_secs_f64()
    }
}

// no monotonic clock on wasm32-unknown-unknown
#[cfg(target_arch = "wasm32")]
struct Stopwatch;

#[cfg(target_arch = "wasm32")]
impl Stopwatch {
    fn start() -> Self {
        Stopwatch
    }
    fn seconds(&self) -> f64 {
        0.0
    }
}

/// Mini-batch SGD on already-featurized inputs. Deterministic in `cfg.seed`.
pub fn train_features(
    xs: &[FeatureVector],
    ys: &[u8],
    groups: &[Group],
    layout_hash: u64,
    cfg: &TrainConfig,
) -> Result<(ClassifierParams, TrainHistory)> {
    cfg.validate()?;
    let input_dim = xs.first().ok_or(Error::Empty("training set"))?.dim();
    let rows: Vec<&[f64]> = xs.iter().map(|x| x.values.as_slice()).collect();
    let full = Batch { xs: &rows, ys, groups };
    full.check(input_dim)?;
    if let Some(bad) = ys.iter().find(|&&y| y > 1) {
        return Err(Error::InvalidData(format!("label {bad} is not 0 or 1")));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = ClassifierParams::init(cfg.arch, input_dim, layout_hash, &mut rng);
    let mut order: Vec<usize> = (0..xs.len()).collect();
    let mut history = TrainHistory::default();
    let clock = Stopwatch::start();

    let mut bx: Vec<&[f64]> = Vec::with_capacity(cfg.batch_size);
    let mut by = Vec::with_capacity(cfg.batch_size);
    let mut bg = Vec::with_capacity(cfg.batch_size);
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            bx.clear();
            by.clear();
            bg.clear();
            for &i in chunk {
                bx.push(rows[i]);
                by.push(ys[i]);
                bg.push(groups[i]);
            }
            let batch = Batch {
                xs: &bx,
                ys: &by,
                groups: &bg,
            };
            let g = gradients(&params, &batch, cfg.lambda)?;
            params.apply_update(&g, cfg.learning_rate, cfg.l2);
        }

        let parts = objective(&params, &full, cfg.lambda)?;
        if !parts.total.is_finite() || params.flat().iter().any(|v| !v.is_finite()) {
            return Err(Error::Diverged { epoch });
        }
        let correct = rows
            .iter()
            .zip(ys)
            .filter(|(x, &y)| (params.margin(x) >= 0.0) == (y == 1))
            .count();
        history.epochs.push(EpochStats {
            epoch,
            loss_cls: parts.cls,
            loss_fair: parts.fair,
            loss_total: parts.total,
            train_accuracy: correct as f64 / ys.len() as f64,
            wall_seconds: clock.seconds(),
        });
    }
    Ok((params, history))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fv(v: &[f64]) -> FeatureVector {
        FeatureVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn zero_logistic_predicts_half() {
        let p = ClassifierParams::zeros(Arch::Logistic, 3, 0);
        assert_eq!(p.forward(&fv(&[1.0, -2.0, 3.0])).unwrap(), 0.5);
        assert!(matches!(
            p.forward(&fv(&[1.0])),
            Err(Error::DimensionMismatch { expected: 3, actual: 1 })
        ));
    }

    #[test]
    fn mlp_with_zero_hidden_weights_outputs_sigmoid_of_bias() {
        let mut p = ClassifierParams::zeros(Arch::Mlp { hidden: 4 }, 3, 0);
        p.layers[1].weights[0] = vec![0.3, -0.2, 1.0, 0.5];
        p.layers[1].bias[0] = 0.7;
        let y = p.forward(&fv(&[5.0, -1.0, 2.0])).unwrap();
        assert!((y - sigmoid(0.7)).abs() < 1e-15);
    }

    #[test]
    fn logistic_is_monotone_in_positive_weight_feature() {
        let mut p = ClassifierParams::zeros(Arch::Logistic, 2, 0);
        p.layers[0].weights[0] = vec![0.8, -0.4];
        let a = p.forward(&fv(&[0.1, 0.5])).unwrap();
        let b = p.forward(&fv(&[0.6, 0.5])).unwrap();
        assert!(b > a);
    }

    #[test]
    fn bce_values() {
        let l = bce_loss(&[0.5; 7], &[1, 0, 1, 1, 0, 0, 1]).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-9);
        let l = bce_loss(&[0.9, 0.1], &[1, 0]).unwrap();
        assert!((l - 0.10536051565782628).abs() < 1e-12);
        assert!(bce_loss(&[1.0, 0.0], &[1, 0]).unwrap() <= 1e-11);
        assert!(matches!(bce_loss(&[], &[]), Err(Error::Empty(_))));
    }

    #[test]
    fn parity_surrogate_values() {
        use Group::*;
        let g = [Rural, Rural, Urban, Urban];
        assert_eq!(parity_surrogate(&[0.2, 0.7, 0.7, 0.2], &g), 0.0);
        let gap = parity_surrogate(&[0.84, 0.84, 0.81, 0.81], &g);
        assert!((gap - 0.03).abs() < 1e-12);
        let swapped = [Urban, Urban, Rural, Rural];
        assert_eq!(parity_surrogate(&[0.84, 0.84, 0.81, 0.81], &swapped), gap);
        assert_eq!(parity_surrogate(&[0.9, 0.1], &[Rural, Rural]), 0.0);
    }

    #[test]
    fn total_loss_reductions() {
        use Group::*;
        let yhat = [0.5, 0.5, 0.5, 0.5];
        let y = [1, 0, 1, 0];
        let g = [Rural, Urban, Rural, Urban];
        assert_eq!(total_loss(&yhat, &y, &g, 0.0).unwrap(), bce_loss(&yhat, &y).unwrap());
        // bce ln 2 plus lambda * 0.03
        let yhat = [0.515, 0.485, 0.515, 0.485];
        let g = [Rural, Urban, Rural, Urban];
        let t = total_loss(&yhat, &y, &g, 1.0).unwrap();
        let expect = bce_loss(&yhat, &y).unwrap() + 0.03;
        assert!((t - expect).abs() < 1e-12);
    }

    fn toy_batch() -> (Vec<Vec<f64>>, Vec<u8>, Vec<Group>) {
        let xs = vec![
            vec![0.2, -1.0, 0.5],
            vec![1.5, 0.3, -0.2],
            vec![-0.7, 0.8, 0.1],
            vec![0.0, 0.4, 1.2],
            vec![0.9, -0.6, -1.1],
        ];
        (
            xs,
            vec![1, 0, 1, 0, 1],
            vec![Group::Rural, Group::Urban, Group::Rural, Group::Urban, Group::Urban],
        )
    }

    #[test]
    fn lambda_zero_gradient_is_pure_classification_gradient() {
        let (xs, ys, gs) = toy_batch();
        let rows: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for arch in [Arch::Logistic, Arch::LinearSvm, Arch::Mlp { hidden: 3 }] {
            let p = ClassifierParams::init(arch, 3, 0, &mut rng);
            let with_groups = gradients(
                &p,
                &Batch {
                    xs: &rows,
                    ys: &ys,
                    groups: &gs,
                },
                0.0,
            )
            .unwrap();
            // a single-group batch has no fairness term at any lambda
            let one_group = vec![Group::Rural; gs.len()];
            let pure = gradients(
                &p,
                &Batch {
                    xs: &rows,
                    ys: &ys,
                    groups: &one_group,
                },
                5.0,
            )
            .unwrap();
            assert_eq!(with_groups, pure, "{arch:?}");
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for k in 0..10 {
            let arch = match k % 3 {
                0 => Arch::Logistic,
                1 => Arch::LinearSvm,
                _ => Arch::Mlp {
                    hidden: rng.random_range(1..8),
                },
            };
            let (n, dim) = (rng.random_range(2..20), rng.random_range(1..6));
            let lambda = rng.random_range(0.0..3.0);
            let xs: Vec<Vec<f64>> = (0..n)
                .map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect())
                .collect();
            let rows: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
            let ys: Vec<u8> = (0..n).map(|_| rng.random_bool(0.4) as u8).collect();
            let groups: Vec<Group> = (0..n)
                .map(|i| if i % 2 == 0 { Group::Rural } else { Group::Urban })
                .collect();
            let batch = Batch {
                xs: &rows,
                ys: &ys,
                groups: &groups,
            };
            let p = ClassifierParams::init(arch, dim, 0, &mut rng);
            let err = gradient_check(&p, &batch, lambda, 1e-5).unwrap();
            assert!(err < 1e-4, "config {k} {arch:?} n {n} lambda {lambda}: {err}");
        }
    }

    #[test]
    fn gradient_vanishes_at_one_dimensional_optimum() {
        // x in {-1, +1}, labels mixed so the optimum is finite:
        // x=+1: 3 positives, 1 negative; x=-1: 1 positive, 3 negatives.
        // Minimizer: w = ln 3, b = 0.
        let xs: Vec<Vec<f64>> = [1.0, 1.0, 1.0, 1.0, -1.0, -1.0, -1.0, -1.0]
            .iter()
            .map(|&v| vec![v])
            .collect();
        let rows: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
        let ys = [1, 1, 1, 0, 1, 0, 0, 0];
        let gs = [Group::Rural; 8];
        let mut p = ClassifierParams::zeros(Arch::Logistic, 1, 0);
        p.layers[0].weights[0][0] = 3f64.ln();
        let g = gradients(
            &p,
            &Batch {
                xs: &rows,
                ys: &ys,
                groups: &gs,
            },
            0.0,
        )
        .unwrap();
        assert!(g.norm() < 1e-6, "{}", g.norm());
    }

    #[test]
    fn separable_toy_set_reaches_full_accuracy() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        let mut gs = Vec::new();
        for i in 0..80 {
            let a: f64 = rng.random_range(-1.0..1.0);
            let b: f64 = rng.random_range(-1.0..1.0);
            if (a + b).abs() < 0.1 {
                continue;
            }
            xs.push(fv(&[a, b]));
            ys.push((a + b > 0.0) as u8);
            gs.push(if i % 2 == 0 { Group::Rural } else { Group::Urban });
        }
        let cfg = TrainConfig {
            arch: Arch::Logistic,
            lambda: 0.0,
            learning_rate: 0.5,
            epochs: 200,
            batch_size: 16,
            l2: 0.0,
            ..Default::default()
        };
        let (p1, h) = train_features(&xs, &ys, &gs, 0, &cfg).unwrap();
        assert_eq!(h.epochs.len(), 200);
        assert_eq!(h.last().unwrap().train_accuracy, 1.0);
        let (p2, _) = train_features(&xs, &ys, &gs, 0, &cfg).unwrap();
        assert_eq!(p1, p2);
    }

    #[test]
    fn divergence_names_the_epoch() {
        let xs = vec![fv(&[1e200, -1e200]), fv(&[-1e200, 1e200])];
        let cfg = TrainConfig {
            arch: Arch::Logistic,
            learning_rate: 1e200,
            epochs: 3,
            ..Default::default()
        };
        match train_features(&xs, &[1, 0], &[Group::Rural, Group::Urban], 0, &cfg) {
            Err(Error::Diverged { epoch }) => assert_eq!(epoch, 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn arch_parsing() {
        assert_eq!("logistic".parse::<Arch>().unwrap(), Arch::Logistic);
        assert_eq!("svm".parse::<Arch>().unwrap(), Arch::LinearSvm);
        assert_eq!("mlp:8".parse::<Arch>().unwrap(), Arch::Mlp { hidden: 8 });
        assert!("tree".parse::<Arch>().is_err());
    }

    #[test]
    fn history_csv_has_one_row_per_epoch() {
        let h = TrainHistory {
            epochs: (1..=3)
                .map(|e| EpochStats {
                    epoch: e,
                    loss_cls: 0.5,
                    loss_fair: 0.1,
                    loss_total: 0.6,
                    train_accuracy: 0.75,
                    wall_seconds: 0.0,
                })
                .collect(),
        };
        let csv = h.to_csv();
        assert!(csv.starts_with("epoch,loss_cls,loss_fair,loss_total,train_acc,wall_seconds\n"));
        assert_eq!(csv.lines().count(), 4);
    }
}
