//! Hinge adversarial losses, perceptual and feature-matching distances, and
//! their weighted composition.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::layers::{init_with_rng, Init};
use crate::tensor::{Float, Tensor};

/// Elementwise distance used by the perceptual and feature-matching losses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Distance {
    /// Mean absolute difference.
    #[default]
    L1,
    /// Mean squared difference.
    L2,
}

impl Distance {
    pub fn mean<T: Float>(self, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
        if a.shape() != b.shape() {
            return Err(Error::shape("distance", format!("{:?} vs {:?}", a.shape(), b.shape())));
        }
        let d = a.sub(b)?;
        match self {
            Distance::L1 => d.abs()?.mean_all(),
            Distance::L2 => d.square()?.mean_all(),
        }
    }
}

fn nonempty<T>(op: &'static str, v: &[T]) -> Result<()> {
    if v.is_empty() {
        return Err(Error::shape(op, "empty score list"));
    }
    Ok(())
}

fn sum_scalars<T: Float>(terms: Vec<Tensor<T>>) -> Result<Tensor<T>> {
    let mut it = terms.into_iter();
    let mut acc = it.next().ok_or_else(|| Error::shape("sum", "no terms"))?;
    for t in it {
        acc = acc.add(&t)?;
    }
    Ok(acc)
}

/// `sum_s [ mean(relu(1 - D_s(real))) + mean(relu(1 + D_s(fake))) ]`.
pub fn hinge_d_loss<T: Float>(real: &[Tensor<T>], fake: &[Tensor<T>]) -> Result<Tensor<T>> {
    nonempty("hinge_d_loss", real)?;
    if real.len() != fake.len() {
        return Err(Error::shape("hinge_d_loss", format!("{} real vs {} fake scales", real.len(), fake.len())));
    }
    let mut terms = Vec::with_capacity(2 * real.len());
    for (r, f) in real.iter().zip(fake) {
        terms.push(r.neg()?.add_scalar(1.0)?.relu()?.mean_all()?);
        terms.push(f.add_scalar(1.0)?.relu()?.mean_all()?);
    }
    sum_scalars(terms)
}

/// `-sum_s mean(D_s(fake))`.
pub fn hinge_g_loss<T: Float>(fake: &[Tensor<T>]) -> Result<Tensor<T>> {
    nonempty("hinge_g_loss", fake)?;
    sum_scalars(fake.iter().map(|f| f.mean_all()?.neg()).collect::<Result<_>>()?)
}

/// Fixed image-to-features map used by the perceptual loss and by
/// evaluation. Implementations hold no trainable state.
pub trait FeatureExtractor<T: Float> {
    /// Feature maps at decreasing resolution, finest first.
    fn extract(&self, image: &Tensor<T>) -> Result<Vec<Tensor<T>>>;
    /// One weight per level of [`FeatureExtractor::extract`].
    fn level_weights(&self) -> &[f64];
    /// Human-readable identity, printed in evaluation reports.
    fn identity(&self) -> String;
}

/// Per-level weights, finest first.
pub const PERCEPTUAL_WEIGHTS: [f64; 5] = [1.0 / 32.0, 1.0 / 16.0, 1.0 / 8.0, 1.0 / 4.0, 1.0];

/// Default widths of [`ConvFeatureExtractor::seeded`].
pub const EXTRACTOR_WIDTHS: [usize; 5] = [8, 16, 32, 64, 64];

/// Five `Conv3x3 -> ReLU` stages; the first keeps resolution and each later
/// one halves it. Weights are constants, never tracked by autodiff.
pub struct ConvFeatureExtractor<T: Float> {
    pub stages: Vec<(Tensor<T>, Tensor<T>)>,
    pub weights: Vec<f64>,
    label: String,
}

impl<T: Float> ConvFeatureExtractor<T> {
    /// Random features with fan-in scaling for ReLU.
    pub fn seeded(seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut stages = Vec::with_capacity(EXTRACTOR_WIDTHS.len());
        let mut inc = 3;
        for &w in &EXTRACTOR_WIDTHS {
            let weight = init_with_rng(&[w, inc, 3, 3], Init::FanIn { gain: 2f64.sqrt() }, &mut rng)?;
            stages.push((weight, Tensor::zeros(&[w])?));
            inc = w;
        }
        Ok(ConvFeatureExtractor {
            stages,
            weights: PERCEPTUAL_WEIGHTS.to_vec(),
            label: format!(
                "random-conv5/seed={seed}/widths={}",
                EXTRACTOR_WIDTHS.map(|w| w.to_string()).join("-")
            ),
        })
    }

    /// External weights named `stage{i}.weight` / `stage{i}.bias`, `i = 0..5`.
    pub fn from_named(named: &BTreeMap<String, Tensor<T>>, label: &str) -> Result<Self> {
        let mut stages = Vec::new();
        let mut inc = 3;
        for i in 0..PERCEPTUAL_WEIGHTS.len() {
            let get = |n: &str| {
                named
                    .get(&format!("stage{i}.{n}"))
                    .map(Tensor::detach)
                    .ok_or_else(|| Error::Config(format!("extractor weights lack stage{i}.{n}")))
            };
            let (w, b) = (get("weight")?, get("bias")?);
            let s = w.shape();
            if s.len() != 4 || s[1] != inc || s[2] != 3 || s[3] != 3 || b.shape() != [s[0]] {
                return Err(Error::Config(format!(
                    "extractor stage{i}: weight {:?} / bias {:?} do not chain from {inc} channels",
                    s,
                    b.shape()
                )));
            }
            inc = s[0];
            stages.push((w, b));
        }
        Ok(ConvFeatureExtractor { stages, weights: PERCEPTUAL_WEIGHTS.to_vec(), label: label.to_string() })
    }

    /// Named view matching [`ConvFeatureExtractor::from_named`].
    pub fn named(&self) -> BTreeMap<String, Tensor<T>> {
        let mut m = BTreeMap::new();
        for (i, (w, b)) in self.stages.iter().enumerate() {
            m.insert(format!("stage{i}.weight"), w.clone());
            m.insert(format!("stage{i}.bias"), b.clone());
        }
        m
    }
}

impl<T: Float> FeatureExtractor<T> for ConvFeatureExtractor<T> {
    fn extract(&self, image: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        let mut h = image.clone();
        let mut out = Vec::with_capacity(self.stages.len());
        for (i, (w, b)) in self.stages.iter().enumerate() {
            let stride = if i == 0 { 1 } else { 2 };
            h = h.conv2d(w, Some(b), stride, 1)?.relu()?;
            out.push(h.clone());
        }
        Ok(out)
    }

    fn level_weights(&self) -> &[f64] {
        &self.weights
    }

    fn identity(&self) -> String {
        self.label.clone()
    }
}

/// `sum_l w_l * dist(F_l(g), F_l(target))`.
pub fn perceptual_loss<T: Float>(
    fx: &dyn FeatureExtractor<T>,
    g: &Tensor<T>,
    target: &Tensor<T>,
    dist: Distance,
) -> Result<Tensor<T>> {
    if g.shape() != target.shape() {
        return Err(Error::shape("perceptual_loss", format!("{:?} vs {:?}", g.shape(), target.shape())));
    }
    let fg = fx.extract(g)?;
    let ft = fx.extract(&target.detach())?;
    let weights = fx.level_weights();
    if weights.len() != fg.len() {
        return Err(Error::shape("perceptual_loss", format!("{} levels, {} weights", fg.len(), weights.len())));
    }
    let terms = fg
        .iter()
        .zip(&ft)
        .zip(weights)
        .map(|((a, b), &w)| dist.mean(a, b)?.mul_scalar(w))
        .collect::<Result<_>>()?;
    sum_scalars(terms)
}

/// Per scale, the mean over taps of `dist(fake_tap, real_tap)`; summed over
/// scales. The real side is detached.
pub fn feature_matching_loss<T: Float>(
    fake: &[Vec<Tensor<T>>],
    real: &[Vec<Tensor<T>>],
    dist: Distance,
) -> Result<Tensor<T>> {
    nonempty("feature_matching_loss", fake)?;
    if fake.len() != real.len() {
        return Err(Error::shape("feature_matching_loss", format!("{} vs {} scales", fake.len(), real.len())));
    }
    let mut terms = Vec::with_capacity(fake.len());
    for (s, (f, r)) in fake.iter().zip(real).enumerate() {
        if f.len() != r.len() || f.is_empty() {
            return Err(Error::shape(
                "feature_matching_loss",
                format!("scale {s}: {} vs {} taps", f.len(), r.len()),
            ));
        }
        let taps = f.iter().zip(r).map(|(a, b)| dist.mean(a, &b.detach())).collect::<Result<_>>()?;
        terms.push(sum_scalars(taps)?.mul_scalar(1.0 / f.len() as f64)?);
    }
    sum_scalars(terms)
}

/// Weights of the perceptual and feature-matching terms in the generator
/// objective.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub lambda_p: f64,
    pub lambda_fm: f64,
}

impl LossWeights {
    pub const STYLE_TRANSFER: LossWeights = LossWeights { lambda_p: 1.0, lambda_fm: 1.0 };
    pub const SEMANTIC: LossWeights = LossWeights { lambda_p: 20.0, lambda_fm: 10.0 };

    pub fn validate(&self) -> Result<()> {
        for (n, v) in [("lambda_p", self.lambda_p), ("lambda_fm", self.lambda_fm)] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Config(format!("{n} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

impl Default for LossWeights {
    fn default() -> Self {
        Self::STYLE_TRANSFER
    }
}

/// The generator objective and its components.
#[derive(Debug, Clone)]
pub struct GeneratorLoss<T: Float> {
    pub total: Tensor<T>,
    pub adversarial: Tensor<T>,
    pub perceptual: Tensor<T>,
    pub feature_matching: Tensor<T>,
}

/// `L_G = hinge_g + lambda_p * L_P + lambda_fm * L_FM`.
pub fn total_g_loss<T: Float>(
    weights: LossWeights,
    adversarial: Tensor<T>,
    perceptual: Tensor<T>,
    feature_matching: Tensor<T>,
) -> Result<GeneratorLoss<T>> {
    weights.validate()?;
    let total = adversarial
        .add(&perceptual.mul_scalar(weights.lambda_p)?)?
        .add(&feature_matching.mul_scalar(weights.lambda_fm)?)?;
    Ok(GeneratorLoss { total, adversarial, perceptual, feature_matching })
}

/// `L_D`: the discriminator hinge objective over all scales.
pub fn total_d_loss<T: Float>(real: &[Tensor<T>], fake: &[Tensor<T>]) -> Result<Tensor<T>> {
    hinge_d_loss(real, fake)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn randn(shape: &[usize], seed: u64) -> Tensor<f64> {
        init_with_rng(shape, Init::Normal { std: 1.0 }, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    fn consts(v: f64, scales: usize) -> Vec<Tensor<f64>> {
        (0..scales).map(|s| Tensor::full(&[1, 1, 4 >> s.min(1), 4], v).unwrap()).collect()
    }

    fn loop_hinge_d(real: &[Tensor<f64>], fake: &[Tensor<f64>]) -> f64 {
        let mut total = 0.0;
        for (r, f) in real.iter().zip(fake) {
            let mut a = 0.0;
            for &x in r.data() {
                a += -f64::min(-1.0 + x, 0.0);
            }
            let mut b = 0.0;
            for &x in f.data() {
                b += -f64::min(-1.0 - x, 0.0);
            }
            total += a / r.numel() as f64 + b / f.numel() as f64;
        }
        total
    }

    #[test]
    fn hinge_hand_values() {
        assert_eq!(hinge_d_loss(&consts(1.0, 1), &consts(-1.0, 1)).unwrap().item(), 0.0);
        assert_eq!(hinge_d_loss(&consts(0.0, 1), &consts(0.0, 1)).unwrap().item(), 2.0);
        assert_eq!(hinge_g_loss(&consts(0.5, 1)).unwrap().item(), -0.5);
        assert_eq!(hinge_g_loss(&consts(0.5, 3)).unwrap().item(), -1.5);
        assert_eq!(hinge_g_loss(&consts(0.0, 2)).unwrap().item(), 0.0);
        assert!(hinge_d_loss::<f64>(&[], &[]).is_err());
        assert!(hinge_g_loss::<f64>(&[]).is_err());
        assert!(hinge_d_loss(&consts(0.0, 2), &consts(0.0, 1)).is_err());
    }

    #[test]
    fn hinge_matches_loop_oracle() {
        for seed in 0..10 {
            let real: Vec<_> = (0..3).map(|s| randn(&[2, 1, 5 - s, 4], seed * 10 + s as u64)).collect();
            let fake: Vec<_> = (0..3).map(|s| randn(&[2, 1, 5 - s, 4], seed * 10 + 5 + s as u64)).collect();
            let got = hinge_d_loss(&real, &fake).unwrap().item();
            assert!((got - loop_hinge_d(&real, &fake)).abs() < 1e-10);
            let g = hinge_g_loss(&fake).unwrap().item();
            let oracle: f64 = fake.iter().map(|f| -f.data().iter().sum::<f64>() / f.numel() as f64).sum();
            assert!((g - oracle).abs() < 1e-10);
        }
    }

    #[test]
    fn hinge_d_gradient_is_piecewise_constant() {
        let real = randn(&[1, 1, 6, 6], 3).requires_grad();
        let fake = randn(&[1, 1, 6, 6], 4);
        let loss = hinge_d_loss(std::slice::from_ref(&real), &[fake]).unwrap();
        let g = loss.backward().unwrap();
        let m = real.numel() as f64;
        for (&gv, &x) in g.get(&real).unwrap().iter().zip(real.data()) {
            let expect = if x < 1.0 { -1.0 / m } else { 0.0 };
            assert_eq!(gv, expect);
        }
    }

    #[test]
    fn identity_extractor_hand_value() {
        struct Identity;
        impl FeatureExtractor<f64> for Identity {
            fn extract(&self, image: &Tensor<f64>) -> Result<Vec<Tensor<f64>>> {
                Ok(vec![image.clone()])
            }
            fn level_weights(&self) -> &[f64] {
                &[1.0]
            }
            fn identity(&self) -> String {
                "identity".into()
            }
        }
        let t = randn(&[1, 3, 4, 4], 1);
        let g = t.add_scalar(0.5).unwrap();
        assert!((perceptual_loss(&Identity, &g, &t, Distance::L1).unwrap().item() - 0.5).abs() < 1e-12);
        assert!((perceptual_loss(&Identity, &g, &t, Distance::L2).unwrap().item() - 0.25).abs() < 1e-12);
        assert_eq!(perceptual_loss(&Identity, &t, &t, Distance::L1).unwrap().item(), 0.0);
        assert!(perceptual_loss(&Identity, &t, &randn(&[1, 3, 8, 8], 1), Distance::L1).is_err());
    }

    #[test]
    fn extractor_levels_and_constness() {
        let fx = ConvFeatureExtractor::<f64>::seeded(7).unwrap();
        let feats = fx.extract(&randn(&[1, 3, 32, 32], 2)).unwrap();
        let extents: Vec<usize> = feats.iter().map(|f| f.shape()[2]).collect();
        assert_eq!(extents, [32, 16, 8, 4, 2]);
        assert!(fx.stages.iter().all(|(w, b)| !w.is_tracked() && !b.is_tracked()));
        let again = ConvFeatureExtractor::<f64>::seeded(7).unwrap();
        assert!(fx.stages.iter().zip(&again.stages).all(|(a, b)| a.0.bit_eq(&b.0)));
        let round = ConvFeatureExtractor::from_named(&fx.named(), "copy").unwrap();
        assert!(round.stages.iter().zip(&fx.stages).all(|(a, b)| a.0.bit_eq(&b.0)));
        let mut broken = fx.named();
        broken.remove("stage3.bias");
        assert!(ConvFeatureExtractor::from_named(&broken, "x").is_err());
    }

    #[test]
    fn feature_matching_hand_values() {
        let r = randn(&[1, 4, 3, 3], 1);
        let f = r.add_scalar(1.0).unwrap();
        let one = feature_matching_loss(&[vec![f.clone()]], &[vec![r.clone()]], Distance::L1).unwrap().item();
        assert!((one - 1.0).abs() < 1e-12);
        let same = feature_matching_loss(&[vec![r.clone(), r.clone()]], &[vec![r.clone(), r.clone()]], Distance::L1);
        assert_eq!(same.unwrap().item(), 0.0);
        assert!(feature_matching_loss(&[vec![f.clone()]], &[vec![r.clone(), r]], Distance::L1).is_err());
    }

    #[test]
    fn feature_matching_detaches_real() {
        let r = randn(&[1, 2, 3, 3], 1).requires_grad();
        let f = randn(&[1, 2, 3, 3], 2).requires_grad();
        let loss = feature_matching_loss(&[vec![f.clone()]], &[vec![r.clone()]], Distance::L1).unwrap();
        let g = loss.backward().unwrap();
        assert!(g.get(&r).is_none());
        assert!(g.get(&f).is_some());
    }

    #[test]
    fn composition() {
        let adv = Tensor::<f64>::scalar(0.3);
        let p = Tensor::scalar(2.0);
        let fm = Tensor::scalar(5.0);
        let zero = LossWeights { lambda_p: 0.0, lambda_fm: 0.0 };
        let l = total_g_loss(zero, adv.clone(), p.clone(), fm.clone()).unwrap();
        assert_eq!(l.total.item(), 0.3);
        let l = total_g_loss(LossWeights::SEMANTIC, adv, p, fm).unwrap();
        assert!((l.total.item() - (0.3 + 40.0 + 50.0)).abs() < 1e-12);
        assert!(LossWeights { lambda_p: -1.0, lambda_fm: 0.0 }.validate().is_err());
        assert_eq!(LossWeights::default(), LossWeights { lambda_p: 1.0, lambda_fm: 1.0 });
    }

    proptest! {
        #[test]
        fn hinge_d_nonnegative_and_permutation_invariant(
            vals in prop::collection::vec(-3.0f64..3.0, 16),
            fvals in prop::collection::vec(-3.0f64..3.0, 16),
            rot in 0usize..16,
        ) {
            let real = Tensor::from_vec(&[1, 1, 4, 4], vals.clone()).unwrap();
            let fake = Tensor::from_vec(&[1, 1, 4, 4], fvals.clone()).unwrap();
            let l = hinge_d_loss(std::slice::from_ref(&real), std::slice::from_ref(&fake)).unwrap().item();
            prop_assert!(l >= 0.0);
            let zero = vals.iter().all(|&v| v >= 1.0) && fvals.iter().all(|&v| v <= -1.0);
            prop_assert_eq!(l == 0.0, zero);
            let mut pr = vals.clone();
            pr.rotate_left(rot);
            let mut pf = fvals.clone();
            pf.rotate_right(rot);
            let real2 = Tensor::from_vec(&[1, 1, 4, 4], pr).unwrap();
            let fake2 = Tensor::from_vec(&[1, 1, 4, 4], pf).unwrap();
            let l2 = hinge_d_loss(&[real2], &[fake2]).unwrap().item();
            prop_assert!((l - l2).abs() < 1e-12);
            let g = hinge_g_loss(&[fake]).unwrap().item();
            let mut pf = fvals.clone();
            pf.reverse();
            let g2 = hinge_g_loss(&[Tensor::from_vec(&[1, 1, 4, 4], pf).unwrap()]).unwrap().item();
            prop_assert!((g - g2).abs() < 1e-12);
        }
    }
}
