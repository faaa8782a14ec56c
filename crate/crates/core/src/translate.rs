//! Image translation engines (source → pseudo-target) and the
//! self-training augmentations.

use crate::data::SegSample;
use crate::error::{Error, Result};
use crate::numerics::{dft2, idft2, Grid2D, LabelMap, Rng, IGNORE};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EngineKind {
    Fda,
    ColorJitter,
    GaussianBlur,
    Identity,
}

impl EngineKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "fda" => Some(Self::Fda),
            "color_jitter" => Some(Self::ColorJitter),
            "gaussian_blur" => Some(Self::GaussianBlur),
            "identity" => Some(Self::Identity),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Fda => "fda",
            Self::ColorJitter => "color_jitter",
            Self::GaussianBlur => "gaussian_blur",
            Self::Identity => "identity",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EngineSpec {
    pub kind: EngineKind,
    pub beta_fda: f64,
    pub jitter_strength: f64,
    pub blur_sigma: f64,
}

impl Default for EngineSpec {
    fn default() -> Self {
        Self {
            kind: EngineKind::Fda,
            beta_fda: 0.09,
            jitter_strength: 0.5,
            blur_sigma: 1.0,
        }
    }
}

impl EngineSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.beta_fda) {
            return Err(Error::ConfigInvalid(format!("beta_fda {} outside [0,1]", self.beta_fda)));
        }
        if !(0.0..=1.0).contains(&self.jitter_strength) {
            return Err(Error::ConfigInvalid("jitter_strength outside [0,1]".into()));
        }
        if !(self.blur_sigma >= 0.0) {
            return Err(Error::ConfigInvalid("blur_sigma must be >= 0".into()));
        }
        Ok(())
    }

    /// Translate one source image. `reference` is required by FDA only.
    pub fn apply(&self, src: &Grid2D, reference: Option<&Grid2D>, rng: &mut Rng) -> Result<Grid2D> {
        match self.kind {
            EngineKind::Fda => {
                let r = reference.ok_or_else(|| Error::ConfigInvalid("FDA needs a target reference image".into()))?;
                fda_translate(src, r, self.beta_fda)
            }
            EngineKind::ColorJitter => Ok(color_jitter(src, self.jitter_strength, rng)),
            EngineKind::GaussianBlur => Ok(gaussian_blur(src, self.blur_sigma)),
            EngineKind::Identity => Ok(src.clone()),
        }
    }
}

/// Side of the centred low-frequency square.
pub fn band_side(beta: f64, height: usize, width: usize) -> usize {
    let s = (beta * height.min(width) as f64).floor() as usize;
    if beta > 0.0 {
        s.max(1)
    } else {
        0
    }
}

/// Signed frequency of unshifted index `k` on an axis of length `n`.
fn signed_freq(k: usize, n: usize) -> i64 {
    let k = k as i64;
    let n = n as i64;
    if k >= (n + 1) / 2 {
        k - n
    } else {
        k
    }
}

fn in_square(f: i64, side: usize, n: usize) -> bool {
    if side >= n {
        return true;
    }
    // After a quadrant shift the square spans offsets -⌊s/2⌋ ..= s-1-⌊s/2⌋
    // around DC.
    let lo = -((side / 2) as i64);
    let hi = side as i64 - 1 - (side / 2) as i64;
    f >= lo && f <= hi
}

/// Band membership per (unshifted) coefficient. A coefficient belongs to
/// the band if it or its conjugate partner falls inside the centred square,
/// which keeps the swapped spectrum Hermitian for even sides.
pub fn fda_band(height: usize, width: usize, beta: f64) -> Vec<bool> {
    let side = band_side(beta, height, width);
    let mut mask = vec![false; height * width];
    if side == 0 {
        return mask;
    }
    for u in 0..height {
        let fy = signed_freq(u, height);
        for v in 0..width {
            let fx = signed_freq(v, width);
            let direct = in_square(fy, side, height) && in_square(fx, side, width);
            let mirror = in_square(-fy, side, height) && in_square(-fx, side, width);
            mask[u * width + v] = direct || mirror;
        }
    }
    mask
}

/// Amplitude swap without the final clamp, so spectral properties can be
/// inspected exactly.
pub fn fda_translate_unclamped(src: &Grid2D, trg_ref: &Grid2D, beta: f64) -> Result<Grid2D> {
    if !src.same_shape(trg_ref) {
        return Err(Error::ShapeMismatch(format!(
            "source {}x{}x{} vs reference {}x{}x{}",
            src.height, src.width, src.channels, trg_ref.height, trg_ref.width, trg_ref.channels
        )));
    }
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::ConfigInvalid(format!("beta {beta} outside [0,1]")));
    }
    let band = fda_band(src.height, src.width, beta);
    let mut out = src.clone();
    if !band.iter().any(|b| *b) {
        return Ok(out);
    }
    for ch in 0..src.channels {
        let mut s = dft2(&src.channel(ch));
        let t = dft2(&trg_ref.channel(ch));
        for (i, _) in band.iter().enumerate().filter(|(_, b)| **b) {
            let amp = t.amplitude(i);
            let phase = s.phase(i);
            s.re[i] = amp * phase.cos();
            s.im[i] = amp * phase.sin();
        }
        out.set_channel(ch, &idft2(&s)?);
    }
    Ok(out)
}

/// Fourier amplitude swap: low-frequency amplitude of `trg_ref`, phase of
/// `src`, clamped to `[0, 1]`.
pub fn fda_translate(src: &Grid2D, trg_ref: &Grid2D, beta: f64) -> Result<Grid2D> {
    let mut out = fda_translate_unclamped(src, trg_ref, beta)?;
    out.clamp01();
    Ok(out)
}

/// Random brightness, contrast and saturation factors drawn from
/// `[1 − 0.8·strength, 1 + 0.8·strength]`.
pub fn color_jitter(img: &Grid2D, strength: f64, rng: &mut Rng) -> Grid2D {
    if strength <= 0.0 {
        return img.clone();
    }
    let spread = 0.8 * strength;
    let mut factor = || rng.uniform_in(1.0 - spread, 1.0 + spread);
    let c = img.channels;
    let brightness: Vec<f64> = (0..c).map(|_| factor()).collect();
    let contrast: Vec<f64> = (0..c).map(|_| factor()).collect();
    let saturation = factor();
    let n = img.pixels() as f64;
    let mut out = img.clone();
    for ch in 0..c {
        let mean = img.data.iter().skip(ch).step_by(c).sum::<f64>() / n;
        for j in 0..img.pixels() {
            let v = out.data[j * c + ch] * brightness[ch];
            out.data[j * c + ch] = ((v - mean) * contrast[ch] + mean).clamp(0.0, 1.0);
        }
    }
    for j in 0..img.pixels() {
        let px = out.pixel_mut(j);
        let gray = px.iter().sum::<f64>() / c as f64;
        for v in px.iter_mut() {
            *v = (gray + saturation * (*v - gray)).clamp(0.0, 1.0);
        }
    }
    out
}

/// Normalised 1-D Gaussian taps of radius `⌈3σ⌉`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as i64;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|x| (-(x * x) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Mirror an out-of-range index back inside `0..n` (edge not repeated).
fn reflect(mut i: i64, n: usize) -> usize {
    let n = n as i64;
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    i = i.rem_euclid(period);
    (if i >= n { period - i } else { i }) as usize
}

pub fn gaussian_blur(img: &Grid2D, sigma: f64) -> Grid2D {
    if sigma <= 0.0 {
        return img.clone();
    }
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as i64;
    let (h, w, c) = (img.height, img.width, img.channels);
    let mut tmp = Grid2D::zeros(h, w, c);
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let mut acc = 0.0;
                for (t, kv) in k.iter().enumerate() {
                    let xx = reflect(x as i64 + t as i64 - r, w);
                    acc += kv * img.get(y, xx, ch);
                }
                tmp.set(y, x, ch, acc);
            }
        }
    }
    let mut out = Grid2D::zeros(h, w, c);
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let mut acc = 0.0;
                for (t, kv) in k.iter().enumerate() {
                    let yy = reflect(y as i64 + t as i64 - r, h);
                    acc += kv * tmp.get(yy, x, ch);
                }
                out.set(y, x, ch, acc.clamp(0.0, 1.0));
            }
        }
    }
    out
}

/// Pixels whose donor label is one of `selected_classes`.
#[derive(Clone, Debug, PartialEq)]
pub struct MixMask {
    pub mask: Vec<bool>,
    pub selected_classes: Vec<usize>,
}

/// ClassMix with an explicit class selection.
pub fn classmix_with(
    donor: &SegSample,
    recipient: &Grid2D,
    recipient_labels: &LabelMap,
    selected_classes: &[usize],
) -> Result<(Grid2D, LabelMap, MixMask)> {
    let (h, w) = (donor.image.height, donor.image.width);
    if recipient.height != h || recipient.width != w || recipient_labels.height != h || recipient_labels.width != w {
        return Err(Error::ShapeMismatch("classmix donor and recipient differ in size".into()));
    }
    let mut image = recipient.clone();
    let mut labels = recipient_labels.clone();
    let mut mask = vec![false; h * w];
    for j in 0..h * w {
        let l = donor.label.data[j];
        if l != IGNORE && selected_classes.contains(&(l as usize)) {
            mask[j] = true;
            labels.data[j] = l;
            image.pixel_mut(j).copy_from_slice(donor.image.pixel(j));
        }
    }
    Ok((
        image,
        labels,
        MixMask {
            mask,
            selected_classes: selected_classes.to_vec(),
        },
    ))
}

/// ClassMix: paste ⌈n/2⌉ of the donor's present classes onto the recipient.
pub fn classmix(
    donor: &SegSample,
    recipient: &Grid2D,
    recipient_labels: &LabelMap,
    rng: &mut Rng,
) -> Result<(Grid2D, LabelMap, MixMask)> {
    let mut present = donor.label.present_classes();
    let take = present.len().div_ceil(2);
    for i in (1..present.len()).rev() {
        let j = rng.below(i + 1);
        present.swap(i, j);
    }
    let mut selected: Vec<usize> = present.into_iter().take(take).collect();
    selected.sort_unstable();
    classmix_with(donor, recipient, recipient_labels, &selected)
}
