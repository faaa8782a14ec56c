//! Contrastive pair construction: class-balanced queries from pseudo-target
//! embeddings, teacher source prototypes as positives, and negatives drawn
//! equally from source features and unreliable target features.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::losses::{drw_weights, ClassConfidence, DrwMode, LossConfig};
use crate::numerics::{l2_normalize, percentile, Grid2D, LabelMap, Rng, IGNORE};

/// How a class prototype is formed from teacher embeddings.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PrototypeMode {
    /// Normalise the mean of raw embeddings (unit-norm prototype).
    MeanThenNormalize,
    /// Average already-normalised embeddings, no re-normalisation.
    NormalizeThenMean,
}

impl PrototypeMode {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "mean_then_normalize" => Some(Self::MeanThenNormalize),
            "normalize_then_mean" => Some(Self::NormalizeThenMean),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::MeanThenNormalize => "mean_then_normalize",
            Self::NormalizeThenMean => "normalize_then_mean",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PairingConfig {
    pub classes: usize,
    /// Base number of queries per class.
    pub n_queries: usize,
    /// Negatives per query (shared by all queries of a class).
    pub m_negatives: usize,
    /// Unreliable partition: fraction of lowest-confidence target pixels.
    pub alpha: f64,
    pub prototype_mode: PrototypeMode,
    /// Negatives are only needed by the contrastive objective.
    pub need_negatives: bool,
}

/// `p̂(c)`: class frequencies over the batch's valid source pixels.
pub fn label_distribution(labels: &[LabelMap], classes: usize) -> Result<Vec<f64>> {
    let mut counts = vec![0usize; classes];
    for l in labels {
        for &v in &l.data {
            if v != IGNORE && (v as usize) < classes {
                counts[v as usize] += 1;
            }
        }
    }
    let total: usize = counts.iter().sum();
    if total == 0 {
        return Err(Error::EmptyBatch);
    }
    Ok(counts.iter().map(|&c| c as f64 / total as f64).collect())
}

/// `n_q(c) = ⌈C·p̂(c)·n⌉`.
pub fn query_counts(dist: &[f64], n: usize, classes: usize) -> Vec<usize> {
    dist.iter()
        .map(|&p| {
            if p <= 0.0 {
                0
            } else {
                // guard against 4.000000000000001 style round-off
                let x = classes as f64 * p * n as f64;
                let r = x.round();
                if (x - r).abs() < 1e-9 {
                    r as usize
                } else {
                    x.ceil() as usize
                }
            }
        })
        .collect()
}

/// Positive key per class; `None` for classes without pixels or whose mean
/// embedding vanishes.
#[derive(Clone, Debug, PartialEq)]
pub struct PrototypeSet {
    pub per_class: Vec<Option<Vec<f64>>>,
}

pub fn compute_prototypes(
    embeds: &[Grid2D],
    labels: &[LabelMap],
    classes: usize,
    mode: PrototypeMode,
) -> PrototypeSet {
    let dim = embeds.first().map_or(0, |e| e.channels);
    let mut sums = vec![vec![0.0; dim]; classes];
    let mut counts = vec![0usize; classes];
    for (e, l) in embeds.iter().zip(labels) {
        for (j, &c) in l.data.iter().enumerate() {
            if c == IGNORE || c as usize >= classes {
                continue;
            }
            let v = e.pixel(j);
            let add: Vec<f64> = match mode {
                PrototypeMode::MeanThenNormalize => v.to_vec(),
                PrototypeMode::NormalizeThenMean => l2_normalize(v).0,
            };
            for (s, a) in sums[c as usize].iter_mut().zip(add) {
                *s += a;
            }
            counts[c as usize] += 1;
        }
    }
    let per_class = sums
        .into_iter()
        .zip(counts)
        .enumerate()
        .map(|(c, (s, n))| {
            if n == 0 {
                return None;
            }
            let mean: Vec<f64> = s.iter().map(|v| v / n as f64).collect();
            match mode {
                PrototypeMode::MeanThenNormalize => {
                    let (unit, degenerate) = l2_normalize(&mean);
                    if degenerate {
                        log::warn!("class {c}: prototype mean vanished, class skipped this step");
                        None
                    } else {
                        Some(unit)
                    }
                }
                PrototypeMode::NormalizeThenMean => Some(mean),
            }
        })
        .collect();
    PrototypeSet { per_class }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KeyDomain {
    Source,
    Target,
}

/// A candidate negative feature with the labels it was selected by.
#[derive(Clone, Debug, PartialEq)]
pub struct NegativeKey {
    pub vector: Vec<f64>,
    pub domain: KeyDomain,
    /// Source label or target pseudo-label.
    pub label: u8,
    /// Teacher confidence (1.0 for source keys).
    pub confidence: f64,
}

/// Unit-norm negative candidates, stored once and indexed per class.
#[derive(Clone, Debug, PartialEq)]
pub struct NegativePools {
    pub source_keys: Vec<NegativeKey>,
    pub target_keys: Vec<NegativeKey>,
    pub source_by_class: Vec<Vec<usize>>,
    pub target_by_class: Vec<Vec<usize>>,
    /// Confidence threshold; `None` when no target data is used.
    pub gamma: Option<f64>,
}

/// Teacher outputs on target images at feature resolution.
#[derive(Clone, Copy, Debug)]
pub struct TargetView<'a> {
    pub embeds: &'a [Grid2D],
    pub labels: &'a [LabelMap],
    pub confidence: &'a [Grid2D],
}

/// Build per-class negative pools. Target pixels qualify when their
/// confidence is strictly below `γ = percentile(conf, 100·α)` and their
/// pseudo-label differs from the class.
pub fn build_negative_pools(
    source_embeds: &[Grid2D],
    source_labels: &[LabelMap],
    target: Option<TargetView<'_>>,
    alpha: f64,
    classes: usize,
) -> Result<NegativePools> {
    let mut source_keys = Vec::new();
    for (e, l) in source_embeds.iter().zip(source_labels) {
        for (j, &c) in l.data.iter().enumerate() {
            if c != IGNORE {
                source_keys.push(NegativeKey {
                    vector: l2_normalize(e.pixel(j)).0,
                    domain: KeyDomain::Source,
                    label: c,
                    confidence: 1.0,
                });
            }
        }
    }
    let mut target_keys = Vec::new();
    let mut gamma = None;
    if let Some(t) = target {
        let all_conf: Vec<f64> = t.confidence.iter().flat_map(|c| c.data.iter().copied()).collect();
        let g = percentile(&all_conf, 100.0 * alpha)?;
        gamma = Some(g);
        for ((e, l), conf) in t.embeds.iter().zip(t.labels).zip(t.confidence) {
            for (j, (&c, &p)) in l.data.iter().zip(&conf.data).enumerate() {
                if p < g {
                    target_keys.push(NegativeKey {
                        vector: l2_normalize(e.pixel(j)).0,
                        domain: KeyDomain::Target,
                        label: c,
                        confidence: p,
                    });
                }
            }
        }
    }
    let by_class = |keys: &[NegativeKey]| -> Vec<Vec<usize>> {
        (0..classes)
            .map(|c| {
                keys.iter()
                    .enumerate()
                    .filter(|(_, k)| k.label as usize != c)
                    .map(|(i, _)| i)
                    .collect()
            })
            .collect()
    };
    Ok(NegativePools {
        source_by_class: by_class(&source_keys),
        target_by_class: by_class(&target_keys),
        source_keys,
        target_keys,
        gamma,
    })
}

/// Draw `m` negatives for `class`: half from each domain, or all from the
/// source pool when the target pool is empty. Sampling is with
/// replacement.
pub fn sample_negatives<'p>(
    pools: &'p NegativePools,
    class: usize,
    m: usize,
    rng: &mut Rng,
) -> Result<Vec<&'p NegativeKey>> {
    let src = &pools.source_by_class[class];
    if src.is_empty() {
        return Err(Error::NoSourceNegatives(class));
    }
    let trg = &pools.target_by_class[class];
    let from_target = if trg.is_empty() { 0 } else { m / 2 };
    let mut out = Vec::with_capacity(m);
    for _ in 0..m - from_target {
        out.push(&pools.source_keys[src[rng.below(src.len())]]);
    }
    for _ in 0..from_target {
        out.push(&pools.target_keys[trg[rng.below(trg.len())]]);
    }
    Ok(out)
}

/// All pairs of one class for one step.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassPairs {
    pub class: usize,
    /// Unit-norm query vectors.
    pub queries: Vec<Vec<f64>>,
    /// `(image, pixel)` each query was read from.
    pub query_sites: Vec<(usize, usize)>,
    pub positive: Vec<f64>,
    /// Negative vectors shared by every query of the class.
    pub negatives: Vec<Vec<f64>>,
    /// Provenance of each negative (same order as `negatives`).
    pub negative_keys: Vec<NegativeKey>,
    /// Per-class pulling weight `w*_c`.
    pub weight: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PairBatch {
    pub classes: Vec<ClassPairs>,
    pub gamma: Option<f64>,
}

/// Everything the pair builder reads for one step.
#[derive(Clone, Copy, Debug)]
pub struct PairingInputs<'a> {
    /// Student embeddings of the pseudo-target images (raw).
    pub query_embeds: &'a [Grid2D],
    /// Source labels at feature resolution.
    pub source_labels: &'a [LabelMap],
    /// Teacher embeddings of the untranslated source images (raw).
    pub teacher_source: &'a [Grid2D],
    /// Teacher view of the target batch; `None` without target data.
    pub target: Option<TargetView<'a>>,
    /// Mean teacher confidence per class; `None` without target data.
    pub class_confidence: Option<&'a ClassConfidence>,
}

/// Construct the step's [`PairBatch`].
pub fn build_pair_batch(inputs: &PairingInputs<'_>, cfg: &PairingConfig, loss: &LossConfig, rng: &Rng) -> Result<PairBatch> {
    let c_count = cfg.classes;
    let dist = label_distribution(inputs.source_labels, c_count)?;
    let counts = query_counts(&dist, cfg.n_queries, c_count);
    let protos = compute_prototypes(inputs.teacher_source, inputs.source_labels, c_count, cfg.prototype_mode);
    let pools = if cfg.need_negatives {
        Some(build_negative_pools(
            inputs.teacher_source,
            inputs.source_labels,
            inputs.target,
            cfg.alpha,
            c_count,
        )?)
    } else {
        None
    };

    // candidate query sites per class
    let mut sites: Vec<Vec<(usize, usize)>> = vec![Vec::new(); c_count];
    for (i, l) in inputs.source_labels.iter().enumerate() {
        for (j, &c) in l.data.iter().enumerate() {
            if c != IGNORE && (c as usize) < c_count {
                sites[c as usize].push((i, j));
            }
        }
    }

    let query_rng = rng.stream("queries");
    let neg_rng = rng.stream("negatives");
    let mut classes = Vec::new();
    for c in 0..c_count {
        if counts[c] == 0 {
            continue;
        }
        let Some(positive) = protos.per_class[c].clone() else { continue };
        let (negatives, negative_keys) = match &pools {
            Some(p) => match sample_negatives(p, c, cfg.m_negatives, &mut neg_rng.fork(c as u64)) {
                Ok(keys) => (keys.iter().map(|k| k.vector.clone()).collect(), keys.into_iter().cloned().collect()),
                Err(Error::NoSourceNegatives(_)) => {
                    log::debug!("class {c}: no source negatives, skipped");
                    continue;
                }
                Err(e) => return Err(e),
            },
            None => (Vec::new(), Vec::new()),
        };
        let mut qr = query_rng.fork(c as u64);
        let cand = &sites[c];
        let query_sites: Vec<(usize, usize)> = (0..counts[c]).map(|_| cand[qr.below(cand.len())]).collect();
        let queries = query_sites
            .iter()
            .map(|&(i, j)| l2_normalize(inputs.query_embeds[i].pixel(j)).0)
            .collect();
        classes.push(ClassPairs {
            class: c,
            queries,
            query_sites,
            positive,
            negatives,
            negative_keys,
            weight: 0.0,
        });
    }

    let active: Vec<usize> = classes.iter().map(|cp| cp.class).collect();
    let weights = match (&loss.drw_mode, inputs.class_confidence) {
        (DrwMode::Dynamic, Some(conf)) => drw_weights(conf, loss.beta_drw, &active),
        (DrwMode::Fixed(w), _) => w.clone(),
        _ => {
            let mut w = vec![0.0; c_count];
            for &c in &active {
                w[c] = 1.0 / active.len() as f64;
            }
            w
        }
    };
    for cp in &mut classes {
        cp.weight = weights[cp.class];
    }
    let batch = PairBatch {
        classes,
        gamma: pools.as_ref().and_then(|p| p.gamma),
    };
    debug_assert!(batch.check_invariants(inputs.source_labels).is_ok());
    Ok(batch)
}

impl PairBatch {
    /// Structural contract of a pair batch; `Err` describes the first
    /// violation.
    pub fn check_invariants(&self, source_labels: &[LabelMap]) -> std::result::Result<(), String> {
        for cp in &self.classes {
            let c = cp.class as u8;
            for &(i, j) in &cp.query_sites {
                if source_labels[i].data[j] != c {
                    return Err(format!("query of class {c} sits on label {}", source_labels[i].data[j]));
                }
            }
            for k in &cp.negative_keys {
                if k.label == c {
                    match (k.domain, self.gamma) {
                        (KeyDomain::Source, _) => return Err(format!("source negative of class {c} has label {c}")),
                        (KeyDomain::Target, Some(g)) if k.confidence >= g => {
                            return Err(format!("reliable target negative for class {c}"));
                        }
                        _ => return Err(format!("target negative of class {c} pseudo-labeled {c}")),
                    }
                }
                if k.domain == KeyDomain::Target && self.gamma.is_some_and(|g| k.confidence >= g) {
                    return Err(format!("target negative with confidence {} >= gamma", k.confidence));
                }
            }
            let unit = |v: &[f64]| (v.iter().map(|x| x * x).sum::<f64>().sqrt() - 1.0).abs() < 1e-9;
            if !cp.queries.iter().chain(&cp.negatives).all(|v| unit(v)) {
                return Err(format!("non-unit query or key in class {c}"));
            }
        }
        Ok(())
    }

    pub fn query_total(&self) -> usize {
        self.classes.iter().map(|c| c.queries.len()).sum()
    }

    /// Long-format CSV: `class,role,v0,v1,...` with roles query, pos,
    /// neg_src and neg_trg.
    pub fn to_csv(&self) -> String {
        let dim = self
            .classes
            .first()
            .map_or(0, |c| c.positive.len());
        let mut s = String::from("class,role");
        for k in 0..dim {
            let _ = write!(s, ",v{k}");
        }
        s.push('\n');
        let mut row = |class: usize, role: &str, v: &[f64]| {
            let _ = write!(s, "{class},{role}");
            for x in v {
                let _ = write!(s, ",{x}");
            }
            s.push('\n');
        };
        for cp in &self.classes {
            for q in &cp.queries {
                row(cp.class, "query", q);
            }
            row(cp.class, "pos", &cp.positive);
            for k in &cp.negative_keys {
                let role = match k.domain {
                    KeyDomain::Source => "neg_src",
                    KeyDomain::Target => "neg_trg",
                };
                row(cp.class, role, &k.vector);
            }
        }
        s
    }

    pub fn dump_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}
