use rand::Rng;

use crate::error::{Error, Result};
use crate::layers::{join, ConvLayer, ConvSpec, Init, InstanceNorm, Module, StateKind, LRELU_SLOPE};
use crate::tensor::{Float, Tensor};

/// A PatchGAN discriminator: `d_layers` stride-2 4x4 convolutions, one
/// stride-1 4x4 convolution, then a one-channel 4x4 score convolution.
/// Every conv but the first is followed by instance norm; all hidden convs by
/// LReLU(0.2). The outputs of the strided convs are the feature taps.
pub struct PatchDiscriminator<T: Float> {
    pub convs: Vec<ConvLayer<T>>,
    pub score: ConvLayer<T>,
    pub norm: InstanceNorm,
    pub taps: usize,
}

impl<T: Float> PatchDiscriminator<T> {
    /// `widths` has `d_layers + 1` entries.
    pub fn new<R: Rng + ?Sized>(in_channels: usize, widths: &[usize], sn: bool, rng: &mut R) -> Result<Self> {
        let taps = widths.len() - 1;
        let mut convs = Vec::with_capacity(widths.len());
        let mut inc = in_channels;
        for (i, &w) in widths.iter().enumerate() {
            let stride = if i < taps { 2 } else { 1 };
            convs.push(ConvLayer::new(ConvSpec::new(inc, w, 4, stride, 2), sn, Init::default(), rng)?);
            inc = w;
        }
        let score = ConvLayer::new(ConvSpec::new(inc, 1, 4, 1, 2), sn, Init::default(), rng)?;
        Ok(PatchDiscriminator { convs, score, norm: InstanceNorm::default(), taps })
    }

    /// Returns the raw score map and the tapped features.
    pub fn forward(&mut self, x: &Tensor<T>, training: bool) -> Result<(Tensor<T>, Vec<Tensor<T>>)> {
        let mut h = x.clone();
        let mut feats = Vec::with_capacity(self.taps);
        for (i, conv) in self.convs.iter_mut().enumerate() {
            h = conv.forward(&h, training)?;
            if i > 0 {
                h = self.norm.forward(&h)?;
            }
            h = h.leaky_relu(LRELU_SLOPE)?;
            if i < self.taps {
                feats.push(h.clone());
            }
        }
        Ok((self.score.forward(&h, training)?, feats))
    }
}

impl<T: Float> Module<T> for PatchDiscriminator<T> {
    fn visit_state(&mut self, prefix: &str, f: &mut dyn FnMut(&str, StateKind, &mut Tensor<T>)) {
        for (i, c) in self.convs.iter_mut().enumerate() {
            c.visit_state(&join(prefix, &format!("conv{i}")), f);
        }
        self.score.visit_state(&join(prefix, "score"), f);
    }
}

/// Per-scale score maps and tapped features.
#[derive(Clone, Debug)]
pub struct DiscOutput<T: Float> {
    pub scores: Vec<Tensor<T>>,
    pub feats: Vec<Vec<Tensor<T>>>,
}

impl<T: Float> DiscOutput<T> {
    /// Constant copy, cut from the graph.
    pub fn detached(&self) -> Self {
        DiscOutput {
            scores: self.scores.iter().map(Tensor::detach).collect(),
            feats: self.feats.iter().map(|s| s.iter().map(Tensor::detach).collect()).collect(),
        }
    }
}

/// Identical patch discriminators (separate weights) on an image pyramid
/// built by 2x2 average pooling; scale `s` sees the input reduced by `2^s`.
pub struct MultiScaleDiscriminator<T: Float> {
    pub scales: Vec<PatchDiscriminator<T>>,
}

/// Smallest extent the coarsest scale accepts.
pub const MIN_COARSE_EXTENT: usize = 4;

impl<T: Float> MultiScaleDiscriminator<T> {
    pub fn new<R: Rng + ?Sized>(
        in_channels: usize,
        widths: &[usize],
        scales: usize,
        sn: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let scales = (0..scales)
            .map(|_| PatchDiscriminator::new(in_channels, widths, sn, rng))
            .collect::<Result<_>>()?;
        Ok(MultiScaleDiscriminator { scales })
    }

    pub fn check_extent(&self, h: usize, w: usize) -> Result<()> {
        let f = 1usize << (self.scales.len() - 1);
        if h % f != 0 || w % f != 0 || h / f < MIN_COARSE_EXTENT || w / f < MIN_COARSE_EXTENT {
            return Err(Error::shape(
                "discriminator",
                format!(
                    "input {h}x{w} too small or not divisible for {} scales (coarsest must be >= {MIN_COARSE_EXTENT})",
                    self.scales.len()
                ),
            ));
        }
        Ok(())
    }

    pub fn forward(&mut self, x: &Tensor<T>, training: bool) -> Result<DiscOutput<T>> {
        let (_, _, h, w) = x.dims4("discriminator")?;
        self.check_extent(h, w)?;
        let mut input = x.clone();
        let mut out = DiscOutput { scores: Vec::new(), feats: Vec::new() };
        let n = self.scales.len();
        for (s, d) in self.scales.iter_mut().enumerate() {
            let (score, feats) = d.forward(&input, training)?;
            out.scores.push(score);
            out.feats.push(feats);
            if s + 1 < n {
                input = input.avg_pool(2)?;
            }
        }
        Ok(out)
    }
}

impl<T: Float> Module<T> for MultiScaleDiscriminator<T> {
    fn visit_state(&mut self, prefix: &str, f: &mut dyn FnMut(&str, StateKind, &mut Tensor<T>)) {
        for (i, d) in self.scales.iter_mut().enumerate() {
            d.visit_state(&join(prefix, &format!("scale{i}")), f);
        }
    }
}
