use crate::data::{DomainDataset, GroundTruth};
use crate::error::{Error, Result};
use crate::model::{forward_traced, pseudo_label_from_probs, Heads, ModelParams};
use crate::numerics::{LabelMap, IGNORE};

/// Row = ground truth, column = prediction.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub classes: usize,
    pub counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        Self {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    pub fn at(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.classes + pred]
    }

    pub fn add(&mut self, truth: &LabelMap, pred: &LabelMap) {
        for (&t, &p) in truth.data.iter().zip(&pred.data) {
            if t == IGNORE || (t as usize) >= self.classes || (p as usize) >= self.classes {
                continue;
            }
            self.counts[t as usize * self.classes + p as usize] += 1;
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MiouReport {
    /// `None` where TP + FP + FN = 0.
    pub per_class: Vec<Option<f64>>,
    pub mean: f64,
}

pub fn miou(cm: &ConfusionMatrix) -> Result<MiouReport> {
    if cm.total() == 0 {
        return Err(Error::EmptyMatrix);
    }
    let c = cm.classes;
    let per_class: Vec<Option<f64>> = (0..c)
        .map(|k| {
            let tp = cm.at(k, k);
            let fn_: u64 = (0..c).map(|p| cm.at(k, p)).sum::<u64>() - tp;
            let fp: u64 = (0..c).map(|t| cm.at(t, k)).sum::<u64>() - tp;
            let denom = tp + fp + fn_;
            (denom > 0).then(|| tp as f64 / denom as f64)
        })
        .collect();
    let valid: Vec<f64> = per_class.iter().flatten().copied().collect();
    let mean = valid.iter().sum::<f64>() / valid.len() as f64;
    Ok(MiouReport { per_class, mean })
}

/// Confusion matrix of `params` on held-out images against quarantined
/// labels.
pub fn evaluate(params: &ModelParams, images: &DomainDataset, truth: &GroundTruth) -> Result<ConfusionMatrix> {
    let mut cm = ConfusionMatrix::new(params.arch.classes);
    for (i, s) in images.samples.iter().enumerate() {
        let t = forward_traced(params, &s.image, Heads::SEGMENTOR)?;
        let pred = pseudo_label_from_probs(&t.seg.expect("segmentor").probs, 1.0).labels;
        cm.add(truth.label(i), &pred);
    }
    Ok(cm)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lm(v: &[u8]) -> LabelMap {
        LabelMap {
            height: 1,
            width: v.len(),
            data: v.to_vec(),
        }
    }

    #[test]
    fn perfect_predictions() {
        let mut cm = ConfusionMatrix::new(3);
        cm.add(&lm(&[0, 1, 2, 2]), &lm(&[0, 1, 2, 2]));
        let r = miou(&cm).unwrap();
        assert_eq!(r.per_class, vec![Some(1.0); 3]);
        assert_eq!(r.mean, 1.0);
    }

    #[test]
    fn all_background_predictions() {
        // hand-built: truth uniform over {0,1}, prediction always 0
        let mut cm = ConfusionMatrix::new(2);
        cm.add(&lm(&[0, 0, 1, 1]), &lm(&[0, 0, 0, 0]));
        assert_eq!(cm.counts, vec![2, 0, 2, 0]);
        let r = miou(&cm).unwrap();
        assert_eq!(r.per_class, vec![Some(0.5), Some(0.0)]);
        assert_eq!(r.mean, 0.25);
    }

    #[test]
    fn absent_class_is_excluded() {
        let mut cm = ConfusionMatrix::new(3);
        cm.add(&lm(&[0, 1, IGNORE]), &lm(&[0, 1, 2]));
        let r = miou(&cm).unwrap();
        assert_eq!(r.per_class[2], None);
        assert_eq!(r.mean, 1.0);
        assert_eq!(cm.total(), 2);
        assert!(matches!(miou(&ConfusionMatrix::new(2)), Err(Error::EmptyMatrix)));
    }

    #[test]
    fn relabeling_permutes_iou() {
        let truth = lm(&[0, 0, 1, 2, 2, 1, 0, 2]);
        let pred = lm(&[0, 1, 1, 2, 0, 1, 0, 1]);
        let perm = [2u8, 0, 1];
        let relabel = |l: &LabelMap| lm(&l.data.iter().map(|v| perm[*v as usize]).collect::<Vec<_>>());
        let mut a = ConfusionMatrix::new(3);
        a.add(&truth, &pred);
        let mut b = ConfusionMatrix::new(3);
        b.add(&relabel(&truth), &relabel(&pred));
        let (ra, rb) = (miou(&a).unwrap(), miou(&b).unwrap());
        for c in 0..3 {
            assert_eq!(ra.per_class[c], rb.per_class[perm[c] as usize]);
        }
        assert!((ra.mean - rb.mean).abs() < 1e-15);
    }
}
