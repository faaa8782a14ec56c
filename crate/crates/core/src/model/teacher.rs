use super::network::{forward_traced, Heads};
use super::params::ModelParams;
use crate::error::{Error, Result};
use crate::numerics::{Grid2D, LabelMap};

/// Momentum teacher: never optimised, only blended towards the student.
#[derive(Clone, Debug, PartialEq)]
pub struct TeacherState {
    pub params: ModelParams,
    pub eta: f64,
}

impl TeacherState {
    /// Exact copy of the student.
    pub fn from_student(student: &ModelParams, eta: f64) -> Self {
        Self {
            params: student.clone(),
            eta,
        }
    }

    /// `θ_t ← η·θ_t + (1 − η)·θ_s`, elementwise.
    pub fn ema_update(&mut self, student: &ModelParams) -> Result<()> {
        self.params.same_layout(student)?;
        let eta = self.eta;
        for (t, s) in self.params.data.iter_mut().zip(&student.data) {
            *t = eta * *t + (1.0 - eta) * s;
        }
        Ok(())
    }
}

/// Hard teacher labels with per-pixel confidence and the image-level
/// quality weight (fraction of pixels above the confidence threshold).
#[derive(Clone, Debug, PartialEq)]
pub struct PseudoLabel {
    pub labels: LabelMap,
    pub confidence: Grid2D,
    pub quality: f64,
}

/// Argmax (lowest index wins ties), max probability and quality.
pub fn pseudo_label_from_probs(probs: &Grid2D, delta_p: f64) -> PseudoLabel {
    let mut labels = LabelMap::filled(probs.height, probs.width, 0);
    let mut confidence = Grid2D::zeros(probs.height, probs.width, 1);
    let mut above = 0usize;
    for j in 0..probs.pixels() {
        let px = probs.pixel(j);
        let (mut best, mut arg) = (px[0], 0usize);
        for (c, &p) in px.iter().enumerate().skip(1) {
            if p > best {
                best = p;
                arg = c;
            }
        }
        labels.data[j] = arg as u8;
        confidence.data[j] = best;
        if best > delta_p {
            above += 1;
        }
    }
    PseudoLabel {
        labels,
        confidence,
        quality: above as f64 / probs.pixels() as f64,
    }
}

pub fn pseudo_label(teacher: &TeacherState, img: &Grid2D, delta_p: f64) -> Result<PseudoLabel> {
    let trace = forward_traced(&teacher.params, img, Heads::SEGMENTOR)?;
    let seg = trace.seg.ok_or(Error::GraphNotRecorded("segmentor"))?;
    Ok(pseudo_label_from_probs(&seg.probs, delta_p))
}
