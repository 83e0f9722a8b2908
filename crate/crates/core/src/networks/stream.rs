use rand::Rng;

use crate::blocks::StreamResBlock;
use crate::error::{Error, Result};
use crate::layers::{join, ConvLayer, ConvSpec, Init, InstanceNorm, Module, StateKind, LRELU_SLOPE};
use crate::tensor::{Float, Tensor};

/// Multi-scale features `f_0 .. f_k`, halving in resolution at each level.
#[derive(Clone, Debug)]
pub struct StreamOutputs<T: Float> {
    pub features: Vec<Tensor<T>>,
}

impl<T: Float> StreamOutputs<T> {
    /// The image itself at every level, resized by nearest decimation.
    /// Used where an ablation injects images instead of stream features.
    pub fn image_pyramid(image: &Tensor<T>, k: usize) -> Result<Self> {
        let features = (0..=k)
            .map(|i| if i == 0 { Ok(image.clone()) } else { image.downsample_nearest(1 << i) })
            .collect::<Result<_>>()?;
        Ok(StreamOutputs { features })
    }

    pub fn level(&self, i: usize) -> &Tensor<T> {
        &self.features[i]
    }
}

/// Content or style stream: a 7x7 input layer, then `k` downsampling
/// residual blocks.
pub struct Stream<T: Float> {
    pub input: ConvLayer<T>,
    pub norm: InstanceNorm,
    pub blocks: Vec<StreamResBlock<T>>,
}

impl<T: Float> Stream<T> {
    /// `widths` is `[f_0, ..., f_k]`.
    pub fn new<R: Rng + ?Sized>(in_channels: usize, widths: &[usize], sn: bool, rng: &mut R) -> Result<Self> {
        let input = ConvLayer::new(ConvSpec::new(in_channels, widths[0], 7, 1, 3), sn, Init::default(), rng)?;
        let blocks = widths
            .windows(2)
            .map(|w| StreamResBlock::new(w[0], w[1], sn, rng))
            .collect::<Result<_>>()?;
        Ok(Stream { input, norm: InstanceNorm::default(), blocks })
    }

    pub fn k(&self) -> usize {
        self.blocks.len()
    }

    pub fn forward(&mut self, x: &Tensor<T>, training: bool) -> Result<StreamOutputs<T>> {
        let (_, c, h, w) = x.dims4("stream")?;
        if c != self.input.spec.inc {
            return Err(Error::shape("stream", format!("input has {c} channels, stream expects {}", self.input.spec.inc)));
        }
        let m = 1usize << self.k();
        if h % m != 0 || w % m != 0 {
            return Err(Error::shape("stream", format!("extent {h}x{w} is not divisible by {m}")));
        }
        let f0 = self.input.forward(x, training)?;
        let mut features = vec![self.norm.forward(&f0)?.leaky_relu(LRELU_SLOPE)?];
        for block in &mut self.blocks {
            let next = block.forward(features.last().expect("non-empty"), training)?;
            features.push(next);
        }
        Ok(StreamOutputs { features })
    }
}

impl<T: Float> Module<T> for Stream<T> {
    fn visit_state(&mut self, prefix: &str, f: &mut dyn FnMut(&str, StateKind, &mut Tensor<T>)) {
        self.input.visit_state(&join(prefix, "input"), f);
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.visit_state(&join(prefix, &format!("block{}", i + 1)), f);
        }
    }
}
