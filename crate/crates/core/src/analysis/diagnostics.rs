use super::features::{ccd, collect_features, cross_domain_similarity, pdd, FeatureBank, FeatureKind};
use super::metrics::{evaluate, miou};
use super::report::MetricRow;
use crate::data::{DomainDataset, GroundTruth};
use crate::error::Result;
use crate::model::ModelParams;

/// Per-class diagnostics of one model on held-out data.
#[derive(Clone, Debug, PartialEq)]
pub struct Diagnostics {
    pub miou: f64,
    pub iou: Vec<Option<f64>>,
    /// On target features.
    pub ccd: Vec<Option<f64>>,
    pub pdd: Vec<Option<f64>>,
    pub similarity: Vec<Option<f64>>,
}

impl Diagnostics {
    pub fn rows(&self, run: &str, step: u64) -> Vec<MetricRow> {
        let mut out = vec![MetricRow::new(run, step, "miou", None, self.miou)];
        for (name, vals) in [
            ("iou", &self.iou),
            ("ccd", &self.ccd),
            ("pdd", &self.pdd),
            ("similarity", &self.similarity),
        ] {
            for (c, v) in vals.iter().enumerate() {
                if let Some(v) = v {
                    out.push(MetricRow::new(run, step, name, Some(c), *v));
                }
            }
        }
        out
    }
}

/// mIoU on the target split plus CCD/PDD on target features and the
/// source/target center similarity. Missing classes come back as `None`.
pub fn diagnostics(
    params: &ModelParams,
    source: &DomainDataset,
    target_images: &DomainDataset,
    truth: &GroundTruth,
    kind: FeatureKind,
) -> Result<Diagnostics> {
    let report = miou(&evaluate(params, target_images, truth)?)?;
    let target = truth.attach(target_images);
    let bank = FeatureBank {
        source: collect_features(params, source, kind)?,
        target: collect_features(params, &target, kind)?,
    };
    let classes = params.arch.classes;
    Ok(Diagnostics {
        miou: report.mean,
        iou: report.per_class,
        ccd: (0..classes).map(|c| ccd(&bank.target, c).ok()).collect(),
        pdd: (0..classes).map(|c| pdd(&bank.target, c).ok()).collect(),
        similarity: cross_domain_similarity(&bank),
    })
}
