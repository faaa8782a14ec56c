//! Evaluation and feature-space diagnostics.

mod diagnostics;
mod features;
mod metrics;
mod report;

pub use diagnostics::{diagnostics, Diagnostics};
pub use features::{ccd, collect_features, cross_domain_similarity, pdd, ClassFeatures, FeatureBank, FeatureKind};
pub use metrics::{evaluate, miou, ConfusionMatrix, MiouReport};
pub use report::{emit_report, parse_metrics_csv, render_svg, MetricRow};
