//! Channels-last convolution and resampling kernels with their adjoints.
//!
//! Convolution weights are stored `[ky][kx][cin][cout]` so the innermost
//! loops run over contiguous output channels.

use crate::numerics::Grid2D;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub cin: usize,
    pub cout: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvSpec {
    pub fn weight_len(&self) -> usize {
        self.kernel * self.kernel * self.cin * self.cout
    }

    pub fn param_count(&self) -> usize {
        self.weight_len() + self.cout
    }

    pub fn out_size(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h + 2 * self.pad - self.kernel) / self.stride + 1,
            (w + 2 * self.pad - self.kernel) / self.stride + 1,
        )
    }

    /// Input coordinate hit by output `o` and tap `k`, if inside the image.
    #[inline]
    fn source(&self, o: usize, k: usize, n: usize) -> Option<usize> {
        let i = (o * self.stride + k) as isize - self.pad as isize;
        (i >= 0 && (i as usize) < n).then_some(i as usize)
    }
}

pub fn conv2d(x: &Grid2D, weight: &[f64], bias: &[f64], spec: &ConvSpec) -> Grid2D {
    debug_assert_eq!(x.channels, spec.cin);
    let (ho, wo) = spec.out_size(x.height, x.width);
    let (cin, cout, k) = (spec.cin, spec.cout, spec.kernel);
    let mut out = Grid2D::zeros(ho, wo, cout);
    for oy in 0..ho {
        for ox in 0..wo {
            let o = &mut out.data[(oy * wo + ox) * cout..(oy * wo + ox + 1) * cout];
            o.copy_from_slice(bias);
            for ky in 0..k {
                let Some(iy) = spec.source(oy, ky, x.height) else { continue };
                for kx in 0..k {
                    let Some(ix) = spec.source(ox, kx, x.width) else { continue };
                    let xin = x.pixel(iy * x.width + ix);
                    let wbase = (ky * k + kx) * cin * cout;
                    for (ci, &xv) in xin.iter().enumerate() {
                        if xv == 0.0 {
                            continue;
                        }
                        let wrow = &weight[wbase + ci * cout..wbase + (ci + 1) * cout];
                        for (ov, wv) in o.iter_mut().zip(wrow) {
                            *ov += xv * wv;
                        }
                    }
                }
            }
        }
    }
    out
}

/// Accumulates weight and bias gradients; returns the input gradient when
/// `need_input` is set.
pub fn conv2d_backward(
    x: &Grid2D,
    weight: &[f64],
    dout: &Grid2D,
    spec: &ConvSpec,
    dweight: &mut [f64],
    dbias: &mut [f64],
    need_input: bool,
) -> Option<Grid2D> {
    let (cin, cout, k) = (spec.cin, spec.cout, spec.kernel);
    let (ho, wo) = (dout.height, dout.width);
    let mut dx = need_input.then(|| Grid2D::zeros(x.height, x.width, cin));
    for oy in 0..ho {
        for ox in 0..wo {
            let g = dout.pixel(oy * wo + ox);
            if g.iter().all(|v| *v == 0.0) {
                continue;
            }
            for (b, gv) in dbias.iter_mut().zip(g) {
                *b += gv;
            }
            for ky in 0..k {
                let Some(iy) = spec.source(oy, ky, x.height) else { continue };
                for kx in 0..k {
                    let Some(ix) = spec.source(ox, kx, x.width) else { continue };
                    let pix = iy * x.width + ix;
                    let wbase = (ky * k + kx) * cin * cout;
                    for ci in 0..cin {
                        let span = wbase + ci * cout..wbase + (ci + 1) * cout;
                        if let Some(dx) = dx.as_mut() {
                            let wrow = &weight[span.clone()];
                            dx.data[pix * cin + ci] += wrow.iter().zip(g).map(|(a, b)| a * b).sum::<f64>();
                        }
                        let xv = x.data[pix * cin + ci];
                        if xv != 0.0 {
                            for (dw, gv) in dweight[span].iter_mut().zip(g) {
                                *dw += xv * gv;
                            }
                        }
                    }
                }
            }
        }
    }
    dx
}

pub fn relu_inplace(x: &mut Grid2D) {
    for v in &mut x.data {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// Zero the gradient wherever the ReLU output was not positive.
pub fn relu_backward_inplace(activated: &Grid2D, grad: &mut Grid2D) {
    for (g, a) in grad.data.iter_mut().zip(&activated.data) {
        if *a <= 0.0 {
            *g = 0.0;
        }
    }
}

/// Half-pixel-centred linear interpolation taps for one axis.
fn taps(out_n: usize, in_n: usize) -> Vec<(usize, usize, f64, f64)> {
    let scale = in_n as f64 / out_n as f64;
    (0..out_n)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(in_n - 1);
            let i1 = (i0 + 1).min(in_n - 1);
            let f = src - i0 as f64;
            (i0, i1, 1.0 - f, f)
        })
        .collect()
}

pub fn bilinear_upsample(x: &Grid2D, out_h: usize, out_w: usize) -> Grid2D {
    let (ty, tx) = (taps(out_h, x.height), taps(out_w, x.width));
    let c = x.channels;
    let mut out = Grid2D::zeros(out_h, out_w, c);
    for (y, &(y0, y1, wy0, wy1)) in ty.iter().enumerate() {
        for (xo, &(x0, x1, wx0, wx1)) in tx.iter().enumerate() {
            let o = out.pixel_mut(y * out_w + xo);
            for (iy, wy) in [(y0, wy0), (y1, wy1)] {
                for (ix, wx) in [(x0, wx0), (x1, wx1)] {
                    let wgt = wy * wx;
                    if wgt == 0.0 {
                        continue;
                    }
                    let src = x.pixel(iy * x.width + ix);
                    for (ov, sv) in o.iter_mut().zip(src) {
                        *ov += wgt * sv;
                    }
                }
            }
        }
    }
    out
}

/// Adjoint of [`bilinear_upsample`].
pub fn bilinear_upsample_backward(dout: &Grid2D, in_h: usize, in_w: usize) -> Grid2D {
    let (ty, tx) = (taps(dout.height, in_h), taps(dout.width, in_w));
    let c = dout.channels;
    let mut dx = Grid2D::zeros(in_h, in_w, c);
    for (y, &(y0, y1, wy0, wy1)) in ty.iter().enumerate() {
        for (xo, &(x0, x1, wx0, wx1)) in tx.iter().enumerate() {
            let g = dout.pixel(y * dout.width + xo);
            for (iy, wy) in [(y0, wy0), (y1, wy1)] {
                for (ix, wx) in [(x0, wx0), (x1, wx1)] {
                    let wgt = wy * wx;
                    if wgt == 0.0 {
                        continue;
                    }
                    let d = dx.pixel_mut(iy * in_w + ix);
                    for (dv, gv) in d.iter_mut().zip(g) {
                        *dv += wgt * gv;
                    }
                }
            }
        }
    }
    dx
}
