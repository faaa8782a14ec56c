use super::layers::{
    bilinear_upsample, bilinear_upsample_backward, conv2d, conv2d_backward, relu_backward_inplace, relu_inplace,
};
use super::params::{Gradients, Layer, ModelArch, ModelParams};
use crate::error::{Error, Result};
use crate::numerics::{softmax_into, Grid2D};

/// Which heads to evaluate on top of the encoder.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Heads {
    pub segmentor: bool,
    pub projector: bool,
}

impl Heads {
    pub const ALL: Heads = Heads {
        segmentor: true,
        projector: true,
    };
    pub const SEGMENTOR: Heads = Heads {
        segmentor: true,
        projector: false,
    };
    pub const PROJECTOR: Heads = Heads {
        segmentor: false,
        projector: true,
    };
}

#[derive(Clone, Debug)]
pub struct SegTrace {
    /// Class logits at feature resolution.
    pub logits_low: Grid2D,
    /// Class probabilities at input resolution.
    pub probs: Grid2D,
}

#[derive(Clone, Debug)]
pub struct ProjTrace {
    pub hidden: Grid2D,
    /// Raw (unnormalized) embeddings.
    pub embed: Grid2D,
}

/// Recorded intermediates of one forward pass. ReLU outputs double as
/// their own activation masks.
#[derive(Clone, Debug)]
pub struct Trace {
    pub input: Grid2D,
    pub act1: Grid2D,
    pub act2: Grid2D,
    pub features: Grid2D,
    pub seg: Option<SegTrace>,
    pub proj: Option<ProjTrace>,
}

/// Encoder features, class probabilities and projector embeddings.
#[derive(Clone, Debug)]
pub struct Output {
    pub features: Grid2D,
    pub probs: Grid2D,
    pub embeddings: Grid2D,
}

fn check_input(img: &Grid2D) -> Result<()> {
    let s = ModelArch::STRIDE;
    if img.channels != 3 || !img.height.is_multiple_of(s) || !img.width.is_multiple_of(s) || img.height == 0 {
        return Err(Error::ShapeMismatch(format!(
            "input {}x{}x{} must be RGB with sides divisible by {s}",
            img.height, img.width, img.channels
        )));
    }
    Ok(())
}

fn conv(params: &ModelParams, layer: Layer, x: &Grid2D) -> Grid2D {
    let (w, b) = params.layer(layer);
    conv2d(x, w, b, &params.arch.conv(layer))
}

pub fn forward_traced(params: &ModelParams, img: &Grid2D, heads: Heads) -> Result<Trace> {
    check_input(img)?;
    let mut act1 = conv(params, Layer::Enc1, img);
    relu_inplace(&mut act1);
    let mut act2 = conv(params, Layer::Enc2, &act1);
    relu_inplace(&mut act2);
    let features = conv(params, Layer::Enc3, &act2);

    let seg = heads.segmentor.then(|| {
        let logits_low = conv(params, Layer::Seg, &features);
        let mut probs = bilinear_upsample(&logits_low, img.height, img.width);
        let c = probs.channels;
        let mut buf = vec![0.0; c];
        for j in 0..probs.pixels() {
            let px = probs.pixel_mut(j);
            softmax_into(px, &mut buf);
            px.copy_from_slice(&buf);
        }
        SegTrace { logits_low, probs }
    });
    let proj = heads.projector.then(|| {
        let mut hidden = conv(params, Layer::Proj1, &features);
        relu_inplace(&mut hidden);
        let embed = conv(params, Layer::Proj2, &hidden);
        ProjTrace { hidden, embed }
    });
    Ok(Trace {
        input: img.clone(),
        act1,
        act2,
        features,
        seg,
        proj,
    })
}

/// Plain inference through every head.
pub fn forward(params: &ModelParams, img: &Grid2D) -> Result<Output> {
    let t = forward_traced(params, img, Heads::ALL)?;
    Ok(Output {
        features: t.features,
        probs: t.seg.expect("segmentor requested").probs,
        embeddings: t.proj.expect("projector requested").embed,
    })
}

/// Loss gradients flowing into a traced forward pass.
#[derive(Clone, Debug, Default)]
pub struct Upstream {
    /// d loss / d (upsampled, pre-softmax logits), H×W×C.
    pub logits: Option<Grid2D>,
    /// d loss / d (raw embeddings), h×w×d.
    pub embed: Option<Grid2D>,
}

/// Reverse-mode pass: accumulates parameter gradients into `grads`.
pub fn backward(params: &ModelParams, trace: &Trace, upstream: &Upstream, grads: &mut Gradients) -> Result<()> {
    let arch = &params.arch;
    let mut dfeat = Grid2D::zeros(trace.features.height, trace.features.width, trace.features.channels);
    let mut any = false;

    if let Some(dlogits) = &upstream.logits {
        let seg = trace.seg.as_ref().ok_or(Error::GraphNotRecorded("segmentor"))?;
        let dlow = bilinear_upsample_backward(dlogits, seg.logits_low.height, seg.logits_low.width);
        let (w, _) = params.layer(Layer::Seg);
        let (dw, db) = grads.layer_mut(arch, Layer::Seg);
        let dx = conv2d_backward(&trace.features, w, &dlow, &arch.conv(Layer::Seg), dw, db, true).unwrap();
        add_into(&mut dfeat, &dx);
        any = true;
    }
    if let Some(dembed) = &upstream.embed {
        let proj = trace.proj.as_ref().ok_or(Error::GraphNotRecorded("projector"))?;
        let (w, _) = params.layer(Layer::Proj2);
        let (dw, db) = grads.layer_mut(arch, Layer::Proj2);
        let mut dhidden = conv2d_backward(&proj.hidden, w, dembed, &arch.conv(Layer::Proj2), dw, db, true).unwrap();
        relu_backward_inplace(&proj.hidden, &mut dhidden);
        let (w, _) = params.layer(Layer::Proj1);
        let (dw, db) = grads.layer_mut(arch, Layer::Proj1);
        let dx = conv2d_backward(&trace.features, w, &dhidden, &arch.conv(Layer::Proj1), dw, db, true).unwrap();
        add_into(&mut dfeat, &dx);
        any = true;
    }
    if !any {
        return Ok(());
    }

    let (w, _) = params.layer(Layer::Enc3);
    let (dw, db) = grads.layer_mut(arch, Layer::Enc3);
    let mut d2 = conv2d_backward(&trace.act2, w, &dfeat, &arch.conv(Layer::Enc3), dw, db, true).unwrap();
    relu_backward_inplace(&trace.act2, &mut d2);
    let (w, _) = params.layer(Layer::Enc2);
    let (dw, db) = grads.layer_mut(arch, Layer::Enc2);
    let mut d1 = conv2d_backward(&trace.act1, w, &d2, &arch.conv(Layer::Enc2), dw, db, true).unwrap();
    relu_backward_inplace(&trace.act1, &mut d1);
    let (w, _) = params.layer(Layer::Enc1);
    let (dw, db) = grads.layer_mut(arch, Layer::Enc1);
    conv2d_backward(&trace.input, w, &d1, &arch.conv(Layer::Enc1), dw, db, false);
    Ok(())
}

fn add_into(acc: &mut Grid2D, x: &Grid2D) {
    for (a, b) in acc.data.iter_mut().zip(&x.data) {
        *a += b;
    }
}
