use super::layers::ConvSpec;
use crate::error::{Error, Result};
use crate::numerics::Rng;

/// Network widths. The defaults mirror a small encoder/segmentor/projector
/// stack: 3→16 (stride 2) → 32 (stride 2) → D, a 1×1 segmentor and a
/// two-conv projector D→32→d.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelArch {
    pub classes: usize,
    pub enc1: usize,
    pub enc2: usize,
    pub feat_dim: usize,
    pub proj_hidden: usize,
    pub embed_dim: usize,
}

impl ModelArch {
    pub fn new(classes: usize) -> Self {
        Self {
            classes,
            enc1: 16,
            enc2: 32,
            feat_dim: 32,
            proj_hidden: 32,
            embed_dim: 16,
        }
    }

    /// Spatial downsampling between the input and the feature map.
    pub const STRIDE: usize = 4;

    pub fn conv(&self, layer: Layer) -> ConvSpec {
        let c3 = |cin, cout, stride| ConvSpec {
            cin,
            cout,
            kernel: 3,
            stride,
            pad: 1,
        };
        match layer {
            Layer::Enc1 => c3(3, self.enc1, 2),
            Layer::Enc2 => c3(self.enc1, self.enc2, 2),
            Layer::Enc3 => c3(self.enc2, self.feat_dim, 1),
            Layer::Seg => ConvSpec {
                cin: self.feat_dim,
                cout: self.classes,
                kernel: 1,
                stride: 1,
                pad: 0,
            },
            Layer::Proj1 => c3(self.feat_dim, self.proj_hidden, 1),
            Layer::Proj2 => c3(self.proj_hidden, self.embed_dim, 1),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Layer {
    Enc1,
    Enc2,
    Enc3,
    Seg,
    Proj1,
    Proj2,
}

impl Layer {
    pub const ALL: [Layer; 6] = [Layer::Enc1, Layer::Enc2, Layer::Enc3, Layer::Seg, Layer::Proj1, Layer::Proj2];

    pub fn name(self) -> &'static str {
        match self {
            Layer::Enc1 => "encoder.conv1",
            Layer::Enc2 => "encoder.conv2",
            Layer::Enc3 => "encoder.conv3",
            Layer::Seg => "segmentor.conv",
            Layer::Proj1 => "projector.conv1",
            Layer::Proj2 => "projector.conv2",
        }
    }

    pub fn group(self) -> ParamGroup {
        match self {
            Layer::Enc1 | Layer::Enc2 | Layer::Enc3 => ParamGroup::Encoder,
            _ => ParamGroup::Head,
        }
    }
}

/// Learning-rate group.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamGroup {
    Encoder,
    Head,
}

/// Flat parameter store; tensors are laid out in `Layer::ALL` order, each
/// as weight then bias.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub arch: ModelArch,
    pub data: Vec<f64>,
}

/// Same layout as [`ModelParams`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub data: Vec<f64>,
}

impl ModelParams {
    pub fn zeros(arch: &ModelArch) -> Self {
        let n = Layer::ALL.iter().map(|l| arch.conv(*l).param_count()).sum();
        Self {
            arch: arch.clone(),
            data: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// `(weight range, bias range)` of a layer in the flat store.
    pub fn ranges(arch: &ModelArch, layer: Layer) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
        let mut off = 0;
        for l in Layer::ALL {
            let spec = arch.conv(l);
            let (wl, bl) = (spec.weight_len(), spec.cout);
            if l == layer {
                return (off..off + wl, off + wl..off + wl + bl);
            }
            off += wl + bl;
        }
        unreachable!()
    }

    pub fn layer(&self, layer: Layer) -> (&[f64], &[f64]) {
        let (w, b) = Self::ranges(&self.arch, layer);
        (&self.data[w], &self.data[b])
    }

    /// Layer owning flat index `i`.
    pub fn layer_of(arch: &ModelArch, i: usize) -> Layer {
        Layer::ALL
            .into_iter()
            .find(|l| Self::ranges(arch, *l).1.end > i)
            .expect("index inside the parameter store")
    }

    pub fn same_layout(&self, other: &ModelParams) -> Result<()> {
        if self.arch != other.arch || self.data.len() != other.data.len() {
            return Err(Error::ShapeMismatch("parameter stores differ in architecture".into()));
        }
        Ok(())
    }
}

impl Gradients {
    pub fn zeros_like(params: &ModelParams) -> Self {
        Self {
            data: vec![0.0; params.len()],
        }
    }

    pub fn layer_mut(&mut self, arch: &ModelArch, layer: Layer) -> (&mut [f64], &mut [f64]) {
        let (w, b) = ModelParams::ranges(arch, layer);
        let (head, tail) = self.data.split_at_mut(b.start);
        (&mut head[w], &mut tail[..b.len()])
    }
}

/// Glorot-uniform weights, zero biases.
pub fn init_params(arch: &ModelArch, rng: &Rng) -> ModelParams {
    let mut p = ModelParams::zeros(arch);
    for layer in Layer::ALL {
        let spec = arch.conv(layer);
        let fan_in = (spec.kernel * spec.kernel * spec.cin) as f64;
        let fan_out = (spec.kernel * spec.kernel * spec.cout) as f64;
        let bound = (6.0 / (fan_in + fan_out)).sqrt();
        let mut r = rng.stream(layer.name());
        let (w, _) = ModelParams::ranges(arch, layer);
        for v in &mut p.data[w] {
            *v = r.uniform_in(-bound, bound);
        }
    }
    p
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_seeded_with_zero_biases() {
        let arch = ModelArch::new(4);
        let a = init_params(&arch, &Rng::new(1));
        assert_eq!(a, init_params(&arch, &Rng::new(1)));
        assert_ne!(a, init_params(&arch, &Rng::new(2)));
        for l in Layer::ALL {
            let (w, b) = a.layer(l);
            assert!(b.iter().all(|v| *v == 0.0));
            let spec = arch.conv(l);
            let bound = (6.0 / ((spec.kernel * spec.kernel) as f64 * (spec.cin + spec.cout) as f64)).sqrt();
            assert!(w.iter().all(|v| v.abs() <= bound));
        }
    }

    #[test]
    fn layout_is_contiguous() {
        let arch = ModelArch::new(3);
        let p = ModelParams::zeros(&arch);
        let mut end = 0;
        for l in Layer::ALL {
            let (w, b) = ModelParams::ranges(&arch, l);
            assert_eq!(w.start, end);
            assert_eq!(b.start, w.end);
            end = b.end;
            assert_eq!(ModelParams::layer_of(&arch, w.start), l);
        }
        assert_eq!(end, p.len());
    }
}
