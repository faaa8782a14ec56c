//! Scalar objectives and their gradients.
//!
//! Cross-entropy gradients are taken with respect to the pre-softmax
//! logits at input resolution; pulling-loss gradients with respect to the
//! unit-norm query vectors.

use crate::error::{Error, Result};
use crate::model::PseudoLabel;
use crate::numerics::{log_sum_exp, Grid2D, LabelMap, IGNORE};
use crate::pairing::PairBatch;

const LOG_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PullKind {
    InfoNce,
    Mse,
}

impl PullKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "infonce" => Some(Self::InfoNce),
            "mse" => Some(Self::Mse),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::InfoNce => "infonce",
            Self::Mse => "mse",
        }
    }
}

/// How per-class pulling weights are chosen.
#[derive(Clone, Debug, PartialEq)]
pub enum DrwMode {
    /// Confidence-driven weights recomputed every step.
    Dynamic,
    /// User-supplied weight per class, used verbatim.
    Fixed(Vec<f64>),
    /// Uniform over active classes.
    None,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossConfig {
    pub tau: f64,
    pub lambda_pull: f64,
    pub pull_kind: PullKind,
    pub beta_drw: f64,
    pub drw_mode: DrwMode,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            tau: 0.2,
            lambda_pull: 0.1,
            pull_kind: PullKind::InfoNce,
            beta_drw: 0.5,
            drw_mode: DrwMode::Dynamic,
        }
    }
}

impl LossConfig {
    pub fn validate(&self, classes: usize) -> Result<()> {
        if !(self.tau > 0.0) {
            return Err(Error::ConfigInvalid("tau must be > 0".into()));
        }
        if !(self.lambda_pull >= 0.0) || !(self.beta_drw >= 0.0) {
            return Err(Error::ConfigInvalid("lambda and beta_drw must be >= 0".into()));
        }
        if let DrwMode::Fixed(w) = &self.drw_mode {
            if w.len() != classes {
                return Err(Error::ConfigInvalid(format!("{} fixed weights for {classes} classes", w.len())));
            }
        }
        Ok(())
    }
}

fn check_aligned(probs: &Grid2D, labels: &LabelMap) -> Result<()> {
    if probs.height != labels.height || probs.width != labels.width {
        return Err(Error::ShapeMismatch("probabilities and labels differ in size".into()));
    }
    Ok(())
}

/// Mean cross-entropy over non-IGNORE pixels, plus its gradient with
/// respect to the softmax inputs.
pub fn source_ce_grad(probs: &Grid2D, labels: &LabelMap) -> Result<(f64, Grid2D)> {
    check_aligned(probs, labels)?;
    let valid = labels.data.iter().filter(|&&l| l != IGNORE).count();
    if valid == 0 {
        return Err(Error::AllIgnored);
    }
    let inv = 1.0 / valid as f64;
    let mut grad = Grid2D::zeros(probs.height, probs.width, probs.channels);
    let mut loss = 0.0;
    for (j, &l) in labels.data.iter().enumerate() {
        if l == IGNORE {
            continue;
        }
        let p = probs.pixel(j);
        loss -= p[l as usize].max(LOG_FLOOR).ln();
        let g = grad.pixel_mut(j);
        for (gv, pv) in g.iter_mut().zip(p) {
            *gv = pv * inv;
        }
        g[l as usize] -= inv;
    }
    Ok((loss * inv, grad))
}

pub fn source_ce(probs: &Grid2D, labels: &LabelMap) -> Result<f64> {
    source_ce_grad(probs, labels).map(|(l, _)| l)
}

/// Quality-weighted cross-entropy against hard pseudo-labels.
pub fn target_ce_grad(probs: &Grid2D, labels: &LabelMap, quality: f64) -> Result<(f64, Grid2D)> {
    check_aligned(probs, labels)?;
    if quality == 0.0 {
        return Ok((0.0, Grid2D::zeros(probs.height, probs.width, probs.channels)));
    }
    let (l, mut g) = source_ce_grad(probs, labels)?;
    g.data.iter_mut().for_each(|v| *v *= quality);
    Ok((quality * l, g))
}

pub fn target_ce(probs: &Grid2D, pl: &PseudoLabel) -> Result<f64> {
    target_ce_grad(probs, &pl.labels, pl.quality).map(|(l, _)| l)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// InfoNCE of one query against its positive key and negatives, evaluated
/// in log-sum-exp form.
pub fn info_nce(q: &[f64], k_pos: &[f64], negs: &[Vec<f64>], tau: f64) -> f64 {
    let mut logits = Vec::with_capacity(negs.len() + 1);
    logits.push(dot(q, k_pos) / tau);
    logits.extend(negs.iter().map(|k| dot(q, k) / tau));
    log_sum_exp(&logits) - logits[0]
}

/// InfoNCE and its gradient with respect to `q`.
pub fn info_nce_grad(q: &[f64], k_pos: &[f64], negs: &[Vec<f64>], tau: f64) -> (f64, Vec<f64>) {
    let mut logits = Vec::with_capacity(negs.len() + 1);
    logits.push(dot(q, k_pos) / tau);
    logits.extend(negs.iter().map(|k| dot(q, k) / tau));
    let lse = log_sum_exp(&logits);
    let mut grad: Vec<f64> = k_pos.iter().map(|k| -k / tau).collect();
    for (z, key) in logits.iter().zip(std::iter::once(k_pos).chain(negs.iter().map(|v| v.as_slice()))) {
        let s = (z - lse).exp() / tau;
        for (g, kv) in grad.iter_mut().zip(key) {
            *g += s * kv;
        }
    }
    (lse - logits[0], grad)
}

/// `‖q − k⁺‖²`.
pub fn mse_pull(q: &[f64], k_pos: &[f64]) -> f64 {
    q.iter().zip(k_pos).map(|(a, b)| (a - b) * (a - b)).sum()
}

pub fn mse_pull_grad(q: &[f64], k_pos: &[f64]) -> (f64, Vec<f64>) {
    (mse_pull(q, k_pos), q.iter().zip(k_pos).map(|(a, b)| 2.0 * (a - b)).collect())
}

/// Mean teacher confidence per pseudo-labeled class; `None` when a class
/// has no pixel.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassConfidence {
    pub per_class: Vec<Option<f64>>,
}

pub fn class_confidence(pl: &PseudoLabel, classes: usize) -> ClassConfidence {
    class_confidence_many(std::slice::from_ref(pl), classes)
}

/// Same statistic pooled over every pseudo-label map of a mini-batch.
pub fn class_confidence_many(pls: &[PseudoLabel], classes: usize) -> ClassConfidence {
    let mut sum = vec![0.0; classes];
    let mut count = vec![0usize; classes];
    for pl in pls {
        for (&l, &c) in pl.labels.data.iter().zip(&pl.confidence.data) {
            if (l as usize) < classes {
                sum[l as usize] += c;
                count[l as usize] += 1;
            }
        }
    }
    ClassConfidence {
        per_class: sum
            .iter()
            .zip(&count)
            .map(|(s, &n)| (n > 0).then(|| s / n as f64))
            .collect(),
    }
}

/// Divisor used before normalisation. Both give identical normalised
/// weights; `Max` follows the closed-form definition, `Min` the reference
/// pseudo-code.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DrwDivisor {
    Max,
    Min,
}

/// Normalised dynamic re-weighting over `active` classes. Returns a vector
/// of length `conf.per_class.len()`, zero outside `active`.
pub fn drw_weights(conf: &ClassConfidence, beta: f64, active: &[usize]) -> Vec<f64> {
    drw_weights_with(conf, beta, active, DrwDivisor::Max)
}

pub fn drw_weights_with(conf: &ClassConfidence, beta: f64, active: &[usize], divisor: DrwDivisor) -> Vec<f64> {
    let classes = conf.per_class.len();
    let mut w = vec![0.0; classes];
    if active.is_empty() {
        return w;
    }
    let gaps: Vec<f64> = active.iter().filter_map(|&c| conf.per_class[c].map(|v| 1.0 - v)).collect();
    let div = match divisor {
        DrwDivisor::Max => gaps.iter().copied().fold(0.0, f64::max),
        DrwDivisor::Min => gaps.iter().copied().fold(f64::INFINITY, f64::min),
    };
    let all_confident = gaps.iter().all(|g| *g <= 0.0);
    for &c in active {
        w[c] = match conf.per_class[c] {
            None => 1.0,
            Some(_) if all_confident => 1.0,
            Some(v) => ((1.0 - v) / div).powf(beta),
        };
    }
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= total);
    w
}

/// Class-weighted pulling objective: average over active classes of
/// `w*_c · mean_q ℓ(q, k⁺_c)`.
pub fn pull_loss(pairs: &PairBatch, cfg: &LossConfig) -> Result<f64> {
    pull_loss_grad(pairs, cfg).map(|(l, _)| l)
}

/// Pulling loss plus `d loss / d q` for every query, grouped like
/// `pairs.classes`.
pub fn pull_loss_grad(pairs: &PairBatch, cfg: &LossConfig) -> Result<(f64, Vec<Vec<Vec<f64>>>)> {
    let active: Vec<_> = pairs.classes.iter().filter(|c| !c.queries.is_empty()).collect();
    if active.is_empty() {
        return Err(Error::NoActiveClasses);
    }
    let inv_active = 1.0 / active.len() as f64;
    let mut total = 0.0;
    let mut grads = Vec::with_capacity(pairs.classes.len());
    for cp in &pairs.classes {
        if cp.queries.is_empty() {
            grads.push(Vec::new());
            continue;
        }
        let scale = cp.weight * inv_active / cp.queries.len() as f64;
        let mut class_sum = 0.0;
        let mut class_grads = Vec::with_capacity(cp.queries.len());
        for q in &cp.queries {
            let (l, g) = match cfg.pull_kind {
                PullKind::InfoNce => info_nce_grad(q, &cp.positive, &cp.negatives, cfg.tau),
                PullKind::Mse => mse_pull_grad(q, &cp.positive),
            };
            class_sum += l;
            class_grads.push(g.into_iter().map(|v| v * scale).collect());
        }
        total += scale * class_sum;
        grads.push(class_grads);
    }
    Ok((total, grads))
}

/// `L = L_source + L_target + λ·L_pull`.
pub fn total_loss(source: f64, target: f64, pull: f64, lambda: f64) -> f64 {
    source + target + lambda * pull
}
