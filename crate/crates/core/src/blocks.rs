//! Residual blocks: the downsampling content/style block and the upsampling
//! FADE block of the generator.

use rand::Rng;

use crate::error::{Error, Result};
use crate::layers::{join, ConvLayer, ConvSpec, Init, InstanceNorm, Module, StateKind, LRELU_SLOPE};
use crate::tensor::{Float, Tensor};
use crate::transforms::Modulator;

/// `Downsample(2)` then a two-conv main path and a learned 1x1 skip, each
/// conv followed by instance norm and LReLU(0.2); paths are summed.
pub struct StreamResBlock<T: Float> {
    pub conv1: ConvLayer<T>,
    pub conv2: ConvLayer<T>,
    pub skip: ConvLayer<T>,
    pub norm: InstanceNorm,
}

impl<T: Float> StreamResBlock<T> {
    pub fn new<R: Rng + ?Sized>(inc: usize, outc: usize, sn: bool, rng: &mut R) -> Result<Self> {
        Ok(StreamResBlock {
            conv1: ConvLayer::new(ConvSpec::same3(inc, inc), sn, Init::default(), rng)?,
            conv2: ConvLayer::new(ConvSpec::same3(inc, outc), sn, Init::default(), rng)?,
            skip: ConvLayer::new(ConvSpec::point(inc, outc), sn, Init::default(), rng)?,
            norm: InstanceNorm::default(),
        })
    }

    pub fn inc(&self) -> usize {
        self.conv1.spec.inc
    }

    pub fn outc(&self) -> usize {
        self.conv2.spec.outc
    }

    pub fn forward(&mut self, x: &Tensor<T>, training: bool) -> Result<Tensor<T>> {
        let (_, c, h, w) = x.dims4("stream_block")?;
        if c != self.inc() {
            return Err(Error::shape("stream_block", format!("input has {c} channels, block expects {}", self.inc())));
        }
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::shape("stream_block", format!("odd extent {h}x{w} cannot be halved")));
        }
        let x = x.downsample_nearest(2)?;
        let a = self.conv1.forward(&x, training)?;
        let a = self.norm.forward(&a)?.leaky_relu(LRELU_SLOPE)?;
        let a = self.conv2.forward(&a, training)?;
        let main = self.norm.forward(&a)?.leaky_relu(LRELU_SLOPE)?;
        let s = self.skip.forward(&x, training)?;
        let skip = self.norm.forward(&s)?.leaky_relu(LRELU_SLOPE)?;
        main.add(&skip)
    }
}

impl<T: Float> Module<T> for StreamResBlock<T> {
    fn visit_state(&mut self, prefix: &str, f: &mut dyn FnMut(&str, StateKind, &mut Tensor<T>)) {
        self.conv1.visit_state(&join(prefix, "conv1"), f);
        self.conv2.visit_state(&join(prefix, "conv2"), f);
        self.skip.visit_state(&join(prefix, "skip"), f);
    }
}

/// The inverse of [`StreamResBlock`] with FADE in place of normalization:
/// `FADE-LReLU-Conv3x3-FADE-LReLU-Conv3x3` plus a shortcut, summed, then
/// nearest upsampling by 2. Every FADE reads the same feature.
///
/// The shortcut is learned (`FADE-LReLU-Conv1x1`) only when the block changes
/// width; otherwise it is the identity. The identity path is what carries a
/// preceding FAdaIN's channel moments through: every FADE starts with batch
/// normalization, which for a batch of one removes exactly those moments.
pub struct FadeResBlock<T: Float> {
    pub fade1: Modulator<T>,
    pub fade2: Modulator<T>,
    pub conv1: ConvLayer<T>,
    pub conv2: ConvLayer<T>,
    pub skip: Option<LearnedSkip<T>>,
}

/// Width-changing shortcut of a [`FadeResBlock`].
pub struct LearnedSkip<T: Float> {
    pub fade: Modulator<T>,
    pub conv: ConvLayer<T>,
}

impl<T: Float> FadeResBlock<T> {
    /// `concat` swaps each FADE for normalization plus concatenation injection.
    pub fn new<R: Rng + ?Sized>(
        inc: usize,
        outc: usize,
        featc: usize,
        concat: bool,
        sn: bool,
        rng: &mut R,
    ) -> Result<Self> {
        Self::new_with_sn(inc, outc, featc, concat, sn, sn, rng)
    }

    /// As [`FadeResBlock::new`], with spectral norm on the modulation
    /// convolutions controlled separately by `fade_sn`.
    pub fn new_with_sn<R: Rng + ?Sized>(
        inc: usize,
        outc: usize,
        featc: usize,
        concat: bool,
        sn: bool,
        fade_sn: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let fade1 = Modulator::new(inc, featc, concat, fade_sn, rng)?;
        let fade2 = Modulator::new(inc, featc, concat, fade_sn, rng)?;
        let conv1 = ConvLayer::new(ConvSpec::same3(inc, inc), sn, Init::default(), rng)?;
        let conv2 = ConvLayer::new(ConvSpec::same3(inc, outc), sn, Init::default(), rng)?;
        let skip = if inc == outc {
            None
        } else {
            Some(LearnedSkip {
                fade: Modulator::new(inc, featc, concat, fade_sn, rng)?,
                conv: ConvLayer::new(ConvSpec::point(inc, outc), sn, Init::default(), rng)?,
            })
        };
        Ok(FadeResBlock { fade1, fade2, conv1, conv2, skip })
    }

    pub fn inc(&self) -> usize {
        self.conv1.spec.inc
    }

    pub fn outc(&self) -> usize {
        self.conv2.spec.outc
    }

    pub fn featc(&self) -> usize {
        self.fade1.featc()
    }

    pub fn forward(&mut self, z: &Tensor<T>, feat: &Tensor<T>, training: bool) -> Result<Tensor<T>> {
        let (_, c, _, _) = z.dims4("fade_block")?;
        if c != self.inc() {
            return Err(Error::shape("fade_block", format!("input has {c} channels, block expects {}", self.inc())));
        }
        let a = self.fade1.forward(z, feat, training)?.leaky_relu(LRELU_SLOPE)?;
        let a = self.conv1.forward(&a, training)?;
        let a = self.fade2.forward(&a, feat, training)?.leaky_relu(LRELU_SLOPE)?;
        let main = self.conv2.forward(&a, training)?;
        let skip = match &mut self.skip {
            Some(s) => s.conv.forward(&s.fade.forward(z, feat, training)?.leaky_relu(LRELU_SLOPE)?, training)?,
            None => z.clone(),
        };
        main.add(&skip)?.upsample_nearest(2)
    }
}

impl<T: Float> Module<T> for FadeResBlock<T> {
    fn visit_state(&mut self, prefix: &str, f: &mut dyn FnMut(&str, StateKind, &mut Tensor<T>)) {
        self.fade1.visit_state(&join(prefix, "fade1"), f);
        self.fade2.visit_state(&join(prefix, "fade2"), f);
        if let Some(s) = &mut self.skip {
            s.fade.visit_state(&join(prefix, "fade_skip"), f);
        }
        self.conv1.visit_state(&join(prefix, "conv1"), f);
        self.conv2.visit_state(&join(prefix, "conv2"), f);
        if let Some(s) = &mut self.skip {
            s.conv.visit_state(&join(prefix, "skip"), f);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::{init_with_rng, BatchNorm};
    use crate::transforms::FadeModule;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn randn(shape: &[usize], seed: u64) -> Tensor<f64> {
        init_with_rng(shape, Init::Normal { std: 1.0 }, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    #[test]
    fn stream_block_shape() {
        let mut b = StreamResBlock::<f32>::new(8, 16, true, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let x = randn(&[1, 8, 16, 16], 2).cast::<f32>();
        assert_eq!(b.forward(&x, true).unwrap().shape(), &[1, 16, 8, 8]);
        assert!(b.forward(&randn(&[1, 8, 5, 6], 2).cast(), true).is_err());
        assert!(b.forward(&randn(&[1, 4, 8, 8], 2).cast(), true).is_err());
    }

    #[test]
    fn stream_block_zero_main_path_leaves_skip() {
        let mut b = StreamResBlock::<f64>::new(2, 3, false, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        b.conv1.set_weights(vec![0.0; 2 * 2 * 9], vec![0.0; 2]).unwrap();
        b.conv2.set_weights(vec![0.0; 3 * 2 * 9], vec![0.0; 3]).unwrap();
        let x = randn(&[1, 2, 6, 6], 4);
        let out = b.forward(&x, true).unwrap();
        let xs = x.downsample_nearest(2).unwrap();
        let skip = InstanceNorm::default().forward(&b.skip.apply(&xs).unwrap()).unwrap().leaky_relu(0.2).unwrap();
        // the zeroed main path normalizes to exactly zero
        assert!(out.max_abs_diff(&skip) < 1e-12);
    }

    #[test]
    fn fade_block_shape() {
        let mut b = FadeResBlock::<f32>::new(16, 8, 12, false, true, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let z = randn(&[1, 16, 8, 8], 6).cast::<f32>();
        let f = randn(&[1, 12, 8, 8], 7).cast::<f32>();
        assert_eq!(b.forward(&z, &f, true).unwrap().shape(), &[1, 8, 16, 16]);
        assert!(b.forward(&z, &randn(&[1, 12, 4, 4], 7).cast(), true).is_err());
    }

    #[test]
    fn shortcut_is_identity_iff_width_is_kept() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut same = FadeResBlock::<f64>::new(3, 3, 2, false, false, &mut rng).unwrap();
        assert!(same.skip.is_none());
        assert!(FadeResBlock::<f64>::new(3, 2, 2, false, false, &mut rng).unwrap().skip.is_some());
        assert!(!same.state("").iter().any(|(n, _, _)| n.contains("skip")));

        // zero main path: the block is the upsampled input itself
        same.conv2.set_weights(vec![0.0; 3 * 3 * 9], vec![0.0; 3]).unwrap();
        let z = randn(&[1, 3, 4, 4], 13);
        let out = same.forward(&z, &randn(&[1, 2, 4, 4], 14), true).unwrap();
        assert!(out.bit_eq(&z.upsample_nearest(2).unwrap()));
    }

    fn unit_modulation(m: &mut Modulator<f64>) {
        let Modulator::Fade(FadeModule { gamma_conv, beta_conv, .. }) = m else { unreachable!() };
        let n = gamma_conv.weight.numel();
        let c = gamma_conv.spec.outc;
        gamma_conv.set_weights(vec![0.0; n], vec![1.0; c]).unwrap();
        beta_conv.set_weights(vec![0.0; n], vec![0.0; c]).unwrap();
    }

    #[test]
    fn unit_modulation_makes_block_content_blind() {
        let mut b = FadeResBlock::<f64>::new(4, 2, 3, false, false, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
        let skip = b.skip.as_mut().unwrap();
        unit_modulation(&mut skip.fade);
        for m in [&mut b.fade1, &mut b.fade2] {
            unit_modulation(m);
        }
        let z = randn(&[1, 4, 4, 4], 9);
        let a = b.forward(&z, &randn(&[1, 3, 4, 4], 10), false).unwrap();
        let c = b.forward(&z, &randn(&[1, 3, 4, 4], 11), false).unwrap();
        assert!(a.bit_eq(&c));

        // equals a plain BN residual block
        let mut bn = BatchNorm::<f64>::new(4).unwrap();
        let main = b.conv1.apply(&bn.forward(&z, false).unwrap().leaky_relu(0.2).unwrap()).unwrap();
        let main = b.conv2.apply(&bn.forward(&main, false).unwrap().leaky_relu(0.2).unwrap()).unwrap();
        let skip = b.skip.as_ref().unwrap().conv.apply(&bn.forward(&z, false).unwrap().leaky_relu(0.2).unwrap()).unwrap();
        let expect = main.add(&skip).unwrap().upsample_nearest(2).unwrap();
        assert!(a.max_abs_diff(&expect) < 1e-12);
    }
}
