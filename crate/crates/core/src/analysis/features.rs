use crate::data::{downsample_labels, DomainDataset};
use crate::error::{Error, Result};
use crate::model::{forward_traced, Heads, ModelArch, ModelParams};
use crate::numerics::{l2_normalize, LabelMap, IGNORE};

const CCD_EPS: f64 = 1e-12;
const PDD_EPS: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FeatureKind {
    /// l2-normalised projector embeddings.
    Projector,
    Encoder,
}

impl FeatureKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "projector" => Some(Self::Projector),
            "encoder" => Some(Self::Encoder),
            _ => None,
        }
    }
}

/// Per-class feature sets of one domain.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ClassFeatures {
    pub per_class: Vec<Vec<Vec<f64>>>,
}

impl ClassFeatures {
    pub fn new(classes: usize) -> Self {
        Self {
            per_class: vec![Vec::new(); classes],
        }
    }

    pub fn classes(&self) -> usize {
        self.per_class.len()
    }

    pub fn push(&mut self, class: usize, v: Vec<f64>) {
        self.per_class[class].push(v);
    }

    pub fn present(&self) -> Vec<usize> {
        (0..self.classes()).filter(|&c| !self.per_class[c].is_empty()).collect()
    }

    pub fn center(&self, class: usize) -> Option<Vec<f64>> {
        let set = self.per_class.get(class)?;
        let first = set.first()?;
        let mut mu = vec![0.0; first.len()];
        for x in set {
            for (m, v) in mu.iter_mut().zip(x) {
                *m += v;
            }
        }
        let n = set.len() as f64;
        mu.iter_mut().for_each(|m| *m /= n);
        Some(mu)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct FeatureBank {
    pub source: ClassFeatures,
    pub target: ClassFeatures,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    dot(a, b) / (dot(a, a).sqrt() * dot(b, b).sqrt()).max(1e-300)
}

fn centers(feats: &ClassFeatures, class: usize) -> Result<(Vec<f64>, Vec<(usize, Vec<f64>)>)> {
    let mu_i = feats.center(class).ok_or(Error::ClassMissing(class))?;
    let others: Vec<(usize, Vec<f64>)> = feats
        .present()
        .into_iter()
        .filter(|&j| j != class)
        .map(|j| (j, feats.center(j).expect("present")))
        .collect();
    if others.is_empty() {
        return Err(Error::ClassMissing(class));
    }
    Ok((mu_i, others))
}

/// Class center distance of `class`. Lower is more discriminative.
pub fn ccd(feats: &ClassFeatures, class: usize) -> Result<f64> {
    let (mu_i, others) = centers(feats, class)?;
    let set = &feats.per_class[class];
    let intra = set.iter().map(|x| sq_dist(x, &mu_i)).sum::<f64>() / set.len() as f64;
    let mut acc = 0.0;
    for (j, mu_j) in &others {
        let mut d = sq_dist(&mu_i, mu_j);
        if d < CCD_EPS {
            log::warn!("DegeneratePair: centers of classes {class} and {j} coincide");
            d = CCD_EPS;
        }
        acc += intra / d;
    }
    Ok(acc / others.len() as f64)
}

/// Pixel-wise discrimination distance of `class`. Negative values are legal.
pub fn pdd(feats: &ClassFeatures, class: usize) -> Result<f64> {
    let (mu_i, others) = centers(feats, class)?;
    let set = &feats.per_class[class];
    let mut acc = 0.0;
    let mut negative = 0usize;
    for x in set {
        let denom: f64 = others.iter().map(|(_, mu_j)| cosine(x, mu_j)).sum();
        if denom < 0.0 {
            negative += 1;
        }
        acc += cosine(x, &mu_i) / (denom + PDD_EPS);
    }
    if negative > 0 {
        log::warn!("pdd: class {class} has {negative} pixels with a negative denominator");
    }
    Ok(1.0 - acc / set.len() as f64)
}

/// Cosine between source and target centers per class, `None` where a
/// domain lacks the class.
pub fn cross_domain_similarity(bank: &FeatureBank) -> Vec<Option<f64>> {
    let classes = bank.source.classes().max(bank.target.classes());
    (0..classes)
        .map(|c| match (bank.source.center(c), bank.target.center(c)) {
            (Some(a), Some(b)) => Some(cosine(&a, &b)),
            _ => None,
        })
        .collect()
}

/// Gathers per-pixel features at the feature resolution, labelled by
/// nearest-downsampled labels of `data` (attach ground truth first for
/// target data).
pub fn collect_features(params: &ModelParams, data: &DomainDataset, kind: FeatureKind) -> Result<ClassFeatures> {
    let heads = match kind {
        FeatureKind::Projector => Heads::PROJECTOR,
        FeatureKind::Encoder => Heads { segmentor: false, projector: false },
    };
    let mut out = ClassFeatures::new(params.arch.classes);
    for s in &data.samples {
        let trace = forward_traced(params, &s.image, heads)?;
        let grid = match kind {
            FeatureKind::Projector => trace.proj.expect("projector").embed,
            FeatureKind::Encoder => trace.features,
        };
        let labels: LabelMap = downsample_labels(&s.label, ModelArch::STRIDE)?;
        for j in 0..grid.pixels() {
            let l = labels.data[j];
            if l == IGNORE || l as usize >= params.arch.classes {
                continue;
            }
            let v = grid.pixel(j).to_vec();
            let v = match kind {
                FeatureKind::Projector => l2_normalize(&v).0,
                FeatureKind::Encoder => v,
            };
            out.push(l as usize, v);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn feats(sets: &[&[&[f64]]]) -> ClassFeatures {
        ClassFeatures {
            per_class: sets.iter().map(|s| s.iter().map(|v| v.to_vec()).collect()).collect(),
        }
    }

    #[test]
    fn ccd_examples() {
        let f = feats(&[&[&[0.0, 0.0], &[2.0, 0.0]], &[&[4.0, 0.0]]]);
        assert!((ccd(&f, 0).unwrap() - 1.0 / 9.0).abs() < 1e-15);
        let single = feats(&[&[&[1.0, 0.0]], &[&[0.0, 3.0]], &[&[2.0, 2.0]]]);
        assert_eq!(ccd(&single, 1).unwrap(), 0.0);
        let scaled = feats(&[&[&[0.0, 0.0], &[6.0, 0.0]], &[&[12.0, 0.0]]]);
        assert!((ccd(&scaled, 0).unwrap() - 1.0 / 9.0).abs() < 1e-15);
    }

    #[test]
    fn ccd_degenerate_pair_uses_floor() {
        let f = feats(&[&[&[0.0], &[2.0]], &[&[1.0]]]);
        assert!((ccd(&f, 0).unwrap() - 1.0 / CCD_EPS).abs() < 1e-3);
    }

    #[test]
    fn pdd_examples() {
        // unit vectors 60 degrees apart: cos(mu_0, mu_1) = 0.5
        let a = [1.0, 0.0];
        let b = [0.5, 3f64.sqrt() / 2.0];
        let f = feats(&[&[&a, &a], &[&b]]);
        assert!((pdd(&f, 0).unwrap() - (1.0 - 1.0 / (0.5 + PDD_EPS))).abs() < 1e-12);
        let scaled = feats(&[&[&[7.0, 0.0], &[7.0, 0.0]], &[&[1.5, 4.5 / 3f64.sqrt()]]]);
        assert!((pdd(&scaled, 0).unwrap() - pdd(&f, 0).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn pdd_zero_own_cosine_gives_one() {
        // symmetric class-0 pixels cancel, so every cos(x, mu_0) is 0
        let f = feats(&[&[&[1.0, 0.0], &[-1.0, 0.0]], &[&[1.0, 0.0], &[1.0, 0.0]]]);
        assert!((pdd(&f, 0).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn similarity_examples() {
        let a = feats(&[&[&[1.0, 2.0]], &[&[0.0, 1.0]], &[]]);
        let mut b = a.clone();
        let bank = FeatureBank { source: a.clone(), target: b.clone() };
        let s = cross_domain_similarity(&bank);
        assert!((s[0].unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(s[2], None);
        b.per_class[1] = vec![vec![0.0, -4.0]];
        let s = cross_domain_similarity(&FeatureBank { source: a, target: b });
        assert!((s[1].unwrap() + 1.0).abs() < 1e-15);
    }

    #[test]
    fn missing_class_errors() {
        let f = feats(&[&[&[1.0]], &[]]);
        assert!(matches!(ccd(&f, 1), Err(Error::ClassMissing(1))));
        assert!(matches!(ccd(&f, 0), Err(Error::ClassMissing(0))));
        assert!(matches!(pdd(&f, 0), Err(Error::ClassMissing(0))));
    }
}
