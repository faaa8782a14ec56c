use super::{Domain, DomainDataset, GroundTruth, SegSample};
use crate::error::{Error, Result};
use crate::numerics::{Grid2D, LabelMap, Rng};

/// Background plus seven shape families.
pub const MAX_CLASSES: usize = 8;

/// Nominal RGB colour of each foreground shape family (index = class − 1).
const PALETTE: [[f64; 3]; MAX_CLASSES - 1] = [
    [0.80, 0.30, 0.25],
    [0.35, 0.70, 0.35],
    [0.30, 0.40, 0.80],
    [0.80, 0.75, 0.25],
    [0.75, 0.30, 0.75],
    [0.25, 0.75, 0.75],
    [0.90, 0.55, 0.20],
];

/// Parametric appearance shift applied to every target image.
#[derive(Clone, Debug, PartialEq)]
pub struct ShiftSpec {
    pub scale: [f64; 3],
    pub offset: [f64; 3],
    pub noise_sigma: f64,
    /// Relative darkening at the image corners.
    pub vignette: f64,
}

impl Default for ShiftSpec {
    fn default() -> Self {
        Self {
            scale: [0.7, 1.1, 1.3],
            offset: [0.1, -0.05, 0.0],
            noise_sigma: 0.03,
            vignette: 0.2,
        }
    }
}

impl ShiftSpec {
    pub fn identity() -> Self {
        Self {
            scale: [1.0; 3],
            offset: [0.0; 3],
            noise_sigma: 0.0,
            vignette: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DataConfig {
    pub classes: usize,
    pub height: usize,
    pub width: usize,
    pub n_source: usize,
    pub n_target: usize,
    pub shift: ShiftSpec,
}

impl DataConfig {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 || self.classes > MAX_CLASSES {
            return Err(Error::ConfigInvalid(format!(
                "class count {} outside 2..={MAX_CLASSES}",
                self.classes
            )));
        }
        if self.height < 16 || self.width < 16 {
            return Err(Error::ConfigInvalid("images must be at least 16x16".into()));
        }
        if self.n_source == 0 || self.n_target == 0 {
            return Err(Error::ConfigInvalid("empty domain".into()));
        }
        Ok(())
    }
}

/// Source data, unlabeled target data and the quarantined target labels.
#[derive(Clone, Debug)]
pub struct SyntheticPair {
    pub source: DomainDataset,
    pub target: DomainDataset,
    pub target_truth: GroundTruth,
}

fn paint(image: &mut Grid2D, label: &mut LabelMap, class: usize, rng: &mut Rng) {
    let (h, w) = (image.height as f64, image.width as f64);
    let side = h.min(w);
    let r = rng.uniform_in(0.10, 0.20) * side;
    let cy = rng.uniform_in(r, h - r);
    let cx = rng.uniform_in(r, w - r);
    let base = PALETTE[class - 1];
    let color: Vec<f64> = base
        .iter()
        .map(|c| (c + rng.uniform_in(-0.08, 0.08)).clamp(0.0, 1.0))
        .collect();
    let aspect = rng.uniform_in(0.6, 1.0);
    let flip = rng.bernoulli(0.5);
    let inside = |y: f64, x: f64| -> bool {
        let (dy, dx) = (y - cy, x - cx);
        match class {
            // rectangle
            1 => dy.abs() <= r * aspect && dx.abs() <= r,
            // disk
            2 => dy * dy + dx * dx <= r * r,
            // triangle, apex up or down
            3 => {
                let t = if flip { -dy } else { dy };
                t <= r && t >= -r && dx.abs() <= (t + r) * 0.5
            }
            // ring
            4 => {
                let d2 = dy * dy + dx * dx;
                d2 <= r * r && d2 >= (0.55 * r) * (0.55 * r)
            }
            // plus sign
            5 => {
                let arm = 0.35 * r;
                (dy.abs() <= arm && dx.abs() <= r) || (dx.abs() <= arm && dy.abs() <= r)
            }
            // diamond
            6 => dy.abs() + dx.abs() <= r,
            // flat ellipse
            _ => (dy / (0.45 * r)).powi(2) + (dx / r).powi(2) <= 1.0,
        }
    };
    for row in 0..image.height {
        for col in 0..image.width {
            if inside(row as f64 + 0.5, col as f64 + 0.5) {
                for (ch, c) in color.iter().enumerate() {
                    image.set(row, col, ch, *c);
                }
                label.set(row, col, class as u8);
            }
        }
    }
}

/// Render one scene containing exactly the shape families in `classes`
/// (each ≥ 1) over a textured background of class 0.
pub fn render_scene(classes: &[usize], height: usize, width: usize, rng: &mut Rng) -> (Grid2D, LabelMap) {
    let mut image = Grid2D::zeros(height, width, 3);
    let mut label = LabelMap::filled(height, width, 0);
    let bg: Vec<f64> = (0..3).map(|_| rng.uniform_in(0.35, 0.6)).collect();
    let freq = [rng.uniform_in(0.15, 0.5), rng.uniform_in(0.15, 0.5)];
    let phase = [rng.uniform_in(0.0, 6.3), rng.uniform_in(0.0, 6.3)];
    for row in 0..height {
        for col in 0..width {
            let tex = 0.06 * ((row as f64 * freq[0] + phase[0]).sin() * (col as f64 * freq[1] + phase[1]).cos());
            for (ch, b) in bg.iter().enumerate() {
                let grain = 0.02 * rng.normal();
                image.set(row, col, ch, (b + tex + grain).clamp(0.0, 1.0));
            }
        }
    }
    let mut order = classes.to_vec();
    for i in (1..order.len()).rev() {
        let j = rng.below(i + 1);
        order.swap(i, j);
    }
    for class in order {
        paint(&mut image, &mut label, class, rng);
    }
    // Occlusion can erase a small shape; repaint until every class shows.
    for &class in classes {
        while !label.data.contains(&(class as u8)) {
            paint(&mut image, &mut label, class, rng);
        }
    }
    (image, label)
}

/// Fixed target-domain appearance change: channel affine, vignette, noise.
pub fn apply_shift(image: &Grid2D, shift: &ShiftSpec, rng: &mut Rng) -> Grid2D {
    let mut out = image.clone();
    let (cy, cx) = ((image.height as f64 - 1.0) / 2.0, (image.width as f64 - 1.0) / 2.0);
    let rmax2 = cy * cy + cx * cx;
    for row in 0..image.height {
        for col in 0..image.width {
            let d2 = (row as f64 - cy).powi(2) + (col as f64 - cx).powi(2);
            let vig = 1.0 - shift.vignette * d2 / rmax2.max(1e-12);
            for ch in 0..3 {
                let mut v = (image.get(row, col, ch) * shift.scale[ch] + shift.offset[ch]).clamp(0.0, 1.0);
                v *= vig;
                if shift.noise_sigma > 0.0 {
                    v += shift.noise_sigma * rng.normal();
                }
                out.set(row, col, ch, v.clamp(0.0, 1.0));
            }
        }
    }
    out
}

/// Per-image class sets where each foreground class appears in at least 20%
/// of the images.
fn class_sets(classes: usize, n: usize, rng: &mut Rng) -> Vec<Vec<usize>> {
    let mut sets: Vec<Vec<usize>> = (0..n)
        .map(|_| {
            let mut s: Vec<usize> = (1..classes).filter(|_| rng.bernoulli(0.5)).collect();
            if s.is_empty() {
                s.push(1 + rng.below(classes - 1));
            }
            s
        })
        .collect();
    let need = (0.2 * n as f64).ceil() as usize;
    for c in 1..classes {
        let mut have = sets.iter().filter(|s| s.contains(&c)).count();
        for i in rng.permutation(n) {
            if have >= need {
                break;
            }
            if !sets[i].contains(&c) {
                sets[i].push(c);
                sets[i].sort_unstable();
                have += 1;
            }
        }
    }
    sets
}

fn gen_domain(cfg: &DataConfig, domain: Domain, n: usize, rng: &Rng) -> Result<Vec<SegSample>> {
    let tag = domain.as_str();
    let sets = class_sets(cfg.classes, n, &mut rng.stream(&format!("{tag}/classes")));
    let scenes = rng.stream(&format!("{tag}/scenes"));
    let noise = rng.stream(&format!("{tag}/shift"));
    Ok(sets
        .iter()
        .enumerate()
        .map(|(k, set)| {
            let (mut image, label) = render_scene(set, cfg.height, cfg.width, &mut scenes.fork(k as u64));
            if domain == Domain::Target {
                image = apply_shift(&image, &cfg.shift, &mut noise.fork(k as u64));
            }
            SegSample { image, label }
        })
        .collect())
}

/// Generate the labeled source domain and the shifted, unlabeled target
/// domain. Target labels are returned separately for evaluation only.
pub fn gen_synthetic_pair(cfg: &DataConfig, rng: &Rng) -> Result<SyntheticPair> {
    cfg.validate()?;
    let source = DomainDataset::new(gen_domain(cfg, Domain::Source, cfg.n_source, rng)?, Domain::Source, cfg.classes)?;
    let labeled = DomainDataset::new(gen_domain(cfg, Domain::Target, cfg.n_target, rng)?, Domain::Target, cfg.classes)?;
    let target_truth = GroundTruth::new(labeled.samples.iter().map(|s| s.label.clone()).collect());
    Ok(SyntheticPair {
        source,
        target: labeled.unlabeled(),
        target_truth,
    })
}
