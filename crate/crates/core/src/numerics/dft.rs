use std::f64::consts::PI;

use super::Grid2D;
use crate::error::{Error, Result};

/// Spectrum of a single-channel plane, stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexGrid2D {
    pub height: usize,
    pub width: usize,
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

impl ComplexGrid2D {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            re: vec![0.0; height * width],
            im: vec![0.0; height * width],
        }
    }

    pub fn amplitude(&self, i: usize) -> f64 {
        self.re[i].hypot(self.im[i])
    }

    pub fn phase(&self, i: usize) -> f64 {
        self.im[i].atan2(self.re[i])
    }
}

/// cos/sin of `sign·2πk/n` for k in 0..n.
fn twiddles(n: usize, sign: f64) -> (Vec<f64>, Vec<f64>) {
    (0..n)
        .map(|k| {
            let a = sign * 2.0 * PI * k as f64 / n as f64;
            (a.cos(), a.sin())
        })
        .unzip()
}

/// In-place naive 1-D DFT over `n` strided complex values.
fn dft_axis(
    re: &mut [f64],
    im: &mut [f64],
    n: usize,
    count: usize,
    elem_stride: usize,
    line_stride: usize,
    sign: f64,
) {
    let (cos, sin) = twiddles(n, sign);
    let mut buf_re = vec![0.0; n];
    let mut buf_im = vec![0.0; n];
    for line in 0..count {
        let base = line * line_stride;
        for k in 0..n {
            let (mut sr, mut si) = (0.0, 0.0);
            for t in 0..n {
                let idx = base + t * elem_stride;
                let w = (k * t) % n;
                let (c, s) = (cos[w], sin[w]);
                sr += re[idx] * c - im[idx] * s;
                si += re[idx] * s + im[idx] * c;
            }
            buf_re[k] = sr;
            buf_im[k] = si;
        }
        for k in 0..n {
            let idx = base + k * elem_stride;
            re[idx] = buf_re[k];
            im[idx] = buf_im[k];
        }
    }
}

fn transform(spec: &mut ComplexGrid2D, sign: f64) {
    let (h, w) = (spec.height, spec.width);
    // rows, then columns
    dft_axis(&mut spec.re, &mut spec.im, w, h, 1, w, sign);
    dft_axis(&mut spec.re, &mut spec.im, h, w, w, 1, sign);
}

/// Unnormalized forward 2-D DFT of a single-channel plane.
pub fn dft2(plane: &Grid2D) -> ComplexGrid2D {
    assert_eq!(plane.channels, 1, "dft2 expects a single-channel plane");
    let mut spec = ComplexGrid2D {
        height: plane.height,
        width: plane.width,
        re: plane.data.clone(),
        im: vec![0.0; plane.data.len()],
    };
    transform(&mut spec, -1.0);
    spec
}

/// Inverse 2-D DFT with the `1/(H·W)` factor.
///
/// The input is expected to be conjugate-symmetric; a reconstruction whose
/// imaginary part exceeds `1e-6` is rejected.
pub fn idft2(spec: &ComplexGrid2D) -> Result<Grid2D> {
    let mut out = spec.clone();
    transform(&mut out, 1.0);
    let scale = 1.0 / (spec.height * spec.width) as f64;
    let residue = out.im.iter().fold(0.0f64, |m, v| m.max((v * scale).abs()));
    if residue > 1e-6 {
        return Err(Error::SpectralResidue(residue));
    }
    Ok(Grid2D {
        height: spec.height,
        width: spec.width,
        channels: 1,
        data: out.re.into_iter().map(|v| v * scale).collect(),
    })
}
