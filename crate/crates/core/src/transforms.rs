//! Feature transformations injecting stream features into the generator.
//!
//! * FADE: batch-normalize a generator activation per channel, then modulate
//!   it element-wise, `gamma(f) * (z - mu) / sigma + beta(f)`, where `gamma`
//!   and `beta` are single 3x3 convolutions of a content feature `f`.
//! * FAdaIN: re-standardize each (sample, channel) slice of `z` and impose the
//!   instance mean and standard deviation of a style feature.
//! * Concatenation injection: the ablation substitute for either of the above.

use rand::Rng;

use crate::error::{Error, Result};
use crate::layers::{instance_stats, join, BatchNorm, ConvLayer, ConvSpec, Init, Module, StateKind, NORM_EPS};
use crate::tensor::{Float, Tensor};

fn same_extent(op: &'static str, a: &Tensor<impl Float>, b: &Tensor<impl Float>) -> Result<()> {
    let (an, _, ah, aw) = a.dims4(op)?;
    let (bn, _, bh, bw) = b.dims4(op)?;
    if an != bn || ah != bh || aw != bw {
        return Err(Error::shape(
            op,
            format!("spatial/batch mismatch: {:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    Ok(())
}

/// Element-wise feature adaptive denormalization over `normc` channels,
/// driven by a `featc`-channel feature.
pub struct FadeModule<T: Float> {
    pub gamma_conv: ConvLayer<T>,
    pub beta_conv: ConvLayer<T>,
    pub bn: BatchNorm<T>,
}

impl<T: Float> FadeModule<T> {
    pub fn new<R: Rng + ?Sized>(normc: usize, featc: usize, sn: bool, rng: &mut R) -> Result<Self> {
        Ok(FadeModule {
            gamma_conv: ConvLayer::new(ConvSpec::same3(featc, normc), sn, Init::default(), rng)?,
            beta_conv: ConvLayer::new(ConvSpec::same3(featc, normc), sn, Init::default(), rng)?,
            bn: BatchNorm::new(normc)?,
        })
    }

    pub fn normc(&self) -> usize {
        self.bn.channels()
    }

    pub fn featc(&self) -> usize {
        self.gamma_conv.spec.inc
    }

    pub fn forward(&mut self, z: &Tensor<T>, feat: &Tensor<T>, training: bool) -> Result<Tensor<T>> {
        same_extent("fade", z, feat)?;
        let gamma = self.gamma_conv.forward(feat, training)?;
        let beta = self.beta_conv.forward(feat, training)?;
        let normalized = self.bn.forward(z, training)?;
        gamma.mul(&normalized)?.add(&beta)
    }
}

impl<T: Float> Module<T> for FadeModule<T> {
    fn visit_state(&mut self, prefix: &str, f: &mut dyn FnMut(&str, StateKind, &mut Tensor<T>)) {
        self.gamma_conv.visit_state(&join(prefix, "gamma"), f);
        self.beta_conv.visit_state(&join(prefix, "beta"), f);
        self.bn.visit_state(&join(prefix, "bn"), f);
    }
}

/// Feature adaptive instance normalization. Statistics are per (sample,
/// channel) over the spatial extent, so `z` and `style` may differ spatially.
pub fn fadain<T: Float>(z: &Tensor<T>, style: &Tensor<T>, eps: f64) -> Result<Tensor<T>> {
    let (zn, zc, _, _) = z.dims4("fadain")?;
    let (sn, sc, _, _) = style.dims4("fadain")?;
    if zn != sn || zc != sc {
        return Err(Error::shape(
            "fadain",
            format!("batch/channel mismatch: {:?} vs {:?}", z.shape(), style.shape()),
        ));
    }
    let (mu_z, sigma_z) = instance_stats(z, eps)?;
    let (mu_s, sigma_s) = instance_stats(style, eps)?;
    z.sub(&mu_z)?.div(&sigma_z)?.mul(&sigma_s)?.add(&mu_s)
}

/// [`fadain`] with the default stabilizer.
pub fn fadain_default<T: Float>(z: &Tensor<T>, style: &Tensor<T>) -> Result<Tensor<T>> {
    fadain(z, style, NORM_EPS)
}

/// Channel concatenation followed by a 1x1 convolution back to `z`'s width.
pub struct ConcatInject<T: Float> {
    pub proj: ConvLayer<T>,
}

impl<T: Float> ConcatInject<T> {
    pub fn new<R: Rng + ?Sized>(zc: usize, featc: usize, sn: bool, rng: &mut R) -> Result<Self> {
        Ok(ConcatInject { proj: ConvLayer::new(ConvSpec::point(zc + featc, zc), sn, Init::default(), rng)? })
    }

    pub fn forward(&mut self, z: &Tensor<T>, feat: &Tensor<T>, training: bool) -> Result<Tensor<T>> {
        same_extent("inject_concat", z, feat)?;
        let (_, zc, _, _) = z.dims4("inject_concat")?;
        let (_, fc, _, _) = feat.dims4("inject_concat")?;
        if zc + fc != self.proj.spec.inc {
            return Err(Error::shape(
                "inject_concat",
                format!("{zc}+{fc} channels, projection expects {}", self.proj.spec.inc),
            ));
        }
        let cat = Tensor::concat(&[z, feat], 1)?;
        self.proj.forward(&cat, training)
    }
}

impl<T: Float> Module<T> for ConcatInject<T> {
    fn visit_state(&mut self, prefix: &str, f: &mut dyn FnMut(&str, StateKind, &mut Tensor<T>)) {
        self.proj.visit_state(&join(prefix, "proj"), f);
    }
}

/// A content-injection site: FADE, or (ablation) normalization followed by
/// concatenation injection.
pub enum Modulator<T: Float> {
    Fade(FadeModule<T>),
    Concat { bn: BatchNorm<T>, inject: ConcatInject<T> },
}

impl<T: Float> Modulator<T> {
    pub fn new<R: Rng + ?Sized>(normc: usize, featc: usize, concat: bool, sn: bool, rng: &mut R) -> Result<Self> {
        if concat {
            Ok(Modulator::Concat { bn: BatchNorm::new(normc)?, inject: ConcatInject::new(normc, featc, sn, rng)? })
        } else {
            Ok(Modulator::Fade(FadeModule::new(normc, featc, sn, rng)?))
        }
    }

    pub fn featc(&self) -> usize {
        match self {
            Modulator::Fade(m) => m.featc(),
            Modulator::Concat { inject, bn } => inject.proj.spec.inc - bn.channels(),
        }
    }

    pub fn forward(&mut self, z: &Tensor<T>, feat: &Tensor<T>, training: bool) -> Result<Tensor<T>> {
        match self {
            Modulator::Fade(m) => m.forward(z, feat, training),
            Modulator::Concat { bn, inject } => {
                let normalized = bn.forward(z, training)?;
                inject.forward(&normalized, feat, training)
            }
        }
    }
}

impl<T: Float> Module<T> for Modulator<T> {
    fn visit_state(&mut self, prefix: &str, f: &mut dyn FnMut(&str, StateKind, &mut Tensor<T>)) {
        match self {
            Modulator::Fade(m) => m.visit_state(prefix, f),
            Modulator::Concat { bn, inject } => {
                bn.visit_state(&join(prefix, "bn"), f);
                inject.visit_state(&join(prefix, "inject"), f);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::{batch_stats, init_with_rng};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn randn(shape: &[usize], seed: u64) -> Tensor<f64> {
        init_with_rng(shape, Init::Normal { std: 1.0 }, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    #[test]
    fn fade_with_unit_gamma_zero_beta_is_batchnorm() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut m = FadeModule::<f64>::new(4, 3, false, &mut rng).unwrap();
        m.gamma_conv.set_weights(vec![0.0; 4 * 3 * 9], vec![1.0; 4]).unwrap();
        m.beta_conv.set_weights(vec![0.0; 4 * 3 * 9], vec![0.0; 4]).unwrap();
        let z = randn(&[2, 4, 5, 5], 2);
        let f = randn(&[2, 3, 5, 5], 3);
        let out = m.forward(&z, &f, true).unwrap();
        let mut bn = BatchNorm::<f64>::new(4).unwrap();
        let expect = bn.forward(&z, true).unwrap();
        assert!(out.max_abs_diff(&expect) < 1e-12);
    }

    #[test]
    fn fade_on_constant_channels_returns_beta() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut m = FadeModule::<f64>::new(2, 3, true, &mut rng).unwrap();
        let z = Tensor::from_vec(&[1, 2, 4, 4], [vec![1.5; 16], vec![-2.0; 16]].concat()).unwrap();
        let f = randn(&[1, 3, 4, 4], 5);
        let out = m.forward(&z, &f, true).unwrap();
        let beta = m.beta_conv.apply(&f).unwrap();
        assert!(out.max_abs_diff(&beta) < 1e-3);
    }

    #[test]
    fn fade_rejects_spatial_mismatch() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut m = FadeModule::<f64>::new(2, 3, true, &mut rng).unwrap();
        assert!(m.forward(&randn(&[1, 2, 4, 4], 1), &randn(&[1, 3, 2, 2], 2), true).is_err());
    }

    #[test]
    fn fadain_identity_and_moment_transfer() {
        let z = randn(&[2, 3, 4, 4], 6).mul_scalar(2.0).unwrap();
        assert!(fadain_default(&z, &z).unwrap().max_abs_diff(&z) < 1e-5);
        let s = randn(&[2, 3, 3, 3], 7).add_scalar(0.7).unwrap();
        let out = fadain(&z, &s, NORM_EPS).unwrap();
        let (mo, so) = instance_stats(&out, NORM_EPS).unwrap();
        let (ms, ss) = instance_stats(&s, NORM_EPS).unwrap();
        assert!(mo.max_abs_diff(&ms) < 1e-4);
        assert!(so.max_abs_diff(&ss) < 1e-4);
        assert!(fadain_default(&z, &randn(&[2, 2, 4, 4], 1)).is_err());
        assert!(fadain_default(&z, &randn(&[1, 3, 4, 4], 1)).is_err());
    }

    #[test]
    fn concat_with_identity_projection_is_z() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut inj = ConcatInject::<f64>::new(2, 3, false, &mut rng).unwrap();
        // [I | 0]
        let mut w = vec![0.0; 2 * 5];
        w[0] = 1.0;
        w[5 + 1] = 1.0;
        inj.proj.set_weights(w, vec![0.0; 2]).unwrap();
        let z = randn(&[1, 2, 3, 3], 10);
        let f = randn(&[1, 3, 3, 3], 11);
        let out = inj.forward(&z, &f, true).unwrap();
        assert_eq!(out.shape(), z.shape());
        assert!(out.bit_eq(&z));
    }

    #[test]
    fn concat_modulator_keeps_channels() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut m = Modulator::<f64>::new(4, 6, true, true, &mut rng).unwrap();
        assert_eq!(m.featc(), 6);
        let out = m.forward(&randn(&[1, 4, 4, 4], 1), &randn(&[1, 6, 4, 4], 2), true).unwrap();
        assert_eq!(out.shape(), &[1, 4, 4, 4]);
        let (mu, _) = batch_stats(&out, 0.0).unwrap();
        assert_eq!(mu.numel(), 4);
    }
}
