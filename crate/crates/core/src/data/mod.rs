//! Synthetic two-domain corpus, portable on-disk format and mini-batching.

mod batch;
mod io;
mod synth;

pub use batch::{BatchSampler, MiniBatch};
pub use io::{load_dataset, save_dataset};
pub use synth::{
    apply_shift, gen_synthetic_pair, render_scene, DataConfig, ShiftSpec, SyntheticPair, MAX_CLASSES,
};

use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::numerics::{Grid2D, LabelMap, IGNORE};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Domain {
    Source,
    Target,
}

impl Domain {
    pub fn as_str(self) -> &'static str {
        match self {
            Domain::Source => "source",
            Domain::Target => "target",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "source" => Some(Domain::Source),
            "target" => Some(Domain::Target),
            _ => None,
        }
    }
}

/// One image with its label map. Unlabeled target samples carry `IGNORE`
/// everywhere.
#[derive(Clone, Debug, PartialEq)]
pub struct SegSample {
    pub image: Grid2D,
    pub label: LabelMap,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DomainDataset {
    pub samples: Vec<SegSample>,
    pub domain: Domain,
    pub classes: usize,
}

impl DomainDataset {
    pub fn new(samples: Vec<SegSample>, domain: Domain, classes: usize) -> Result<Self> {
        let first = samples
            .first()
            .ok_or_else(|| Error::ConfigInvalid("dataset has no samples".into()))?;
        let (h, w) = (first.image.height, first.image.width);
        for s in &samples {
            if s.image.height != h || s.image.width != w || s.image.channels != 3 {
                return Err(Error::ShapeMismatch("samples differ in size".into()));
            }
            if s.label.height != h || s.label.width != w {
                return Err(Error::ShapeMismatch("label and image differ in size".into()));
            }
            if let Some(bad) = s.label.data.iter().find(|&&v| v != IGNORE && v as usize >= classes) {
                return Err(Error::ConfigInvalid(format!("label {bad} >= class count {classes}")));
            }
        }
        Ok(Self {
            samples,
            domain,
            classes,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn height(&self) -> usize {
        self.samples[0].image.height
    }

    pub fn width(&self) -> usize {
        self.samples[0].image.width
    }

    /// Copy with every label replaced by `IGNORE`.
    pub fn unlabeled(&self) -> DomainDataset {
        let samples = self
            .samples
            .iter()
            .map(|s| SegSample {
                image: s.image.clone(),
                label: LabelMap::filled(s.label.height, s.label.width, IGNORE),
            })
            .collect();
        DomainDataset {
            samples,
            domain: self.domain,
            classes: self.classes,
        }
    }
}

static GROUND_TRUTH_READS: AtomicU64 = AtomicU64::new(0);

/// Total number of target ground-truth label reads so far (process-wide).
pub fn ground_truth_reads() -> u64 {
    GROUND_TRUTH_READS.load(Ordering::SeqCst)
}

/// Quarantined target labels. Only evaluation code reads these; every read
/// is counted so tests can audit that training never does.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth {
    labels: Vec<LabelMap>,
}

impl GroundTruth {
    pub fn new(labels: Vec<LabelMap>) -> Self {
        Self { labels }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn label(&self, i: usize) -> &LabelMap {
        GROUND_TRUTH_READS.fetch_add(1, Ordering::SeqCst);
        &self.labels[i]
    }

    /// Labeled copy of `images` for evaluation or export.
    pub fn attach(&self, images: &DomainDataset) -> DomainDataset {
        let samples = images
            .samples
            .iter()
            .enumerate()
            .map(|(i, s)| SegSample {
                image: s.image.clone(),
                label: self.label(i).clone(),
            })
            .collect();
        DomainDataset {
            samples,
            domain: images.domain,
            classes: images.classes,
        }
    }
}

/// Nearest-neighbour label downsampling: `out(r, c) = label(r·f, c·f)`.
pub fn downsample_labels(label: &LabelMap, factor: usize) -> Result<LabelMap> {
    if factor == 0 || !label.height.is_multiple_of(factor) || !label.width.is_multiple_of(factor) {
        return Err(Error::ConfigInvalid(format!(
            "{}x{} labels are not divisible by {factor}",
            label.height, label.width
        )));
    }
    let (h, w) = (label.height / factor, label.width / factor);
    let mut out = LabelMap::filled(h, w, IGNORE);
    for r in 0..h {
        for c in 0..w {
            out.set(r, c, label.get(r * factor, c * factor));
        }
    }
    Ok(out)
}

/// Same nearest rule for a real-valued single-channel grid.
pub fn downsample_plane(plane: &Grid2D, factor: usize) -> Grid2D {
    let (h, w) = (plane.height / factor, plane.width / factor);
    let mut out = Grid2D::zeros(h, w, plane.channels);
    for r in 0..h {
        for c in 0..w {
            for ch in 0..plane.channels {
                out.set(r, c, ch, plane.get(r * factor, c * factor, ch));
            }
        }
    }
    out
}
