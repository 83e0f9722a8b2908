use rand::Rng;
use rand_distr::StandardNormal;

use super::{init_with_rng, join, Init, Module, StateKind};
use crate::error::Result;
use crate::tensor::{Float, Tensor};

/// Shape of a convolution, in the `Conv(inc, outc, kn, s, p)` vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub inc: usize,
    pub outc: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvSpec {
    pub fn new(inc: usize, outc: usize, kernel: usize, stride: usize, pad: usize) -> Self {
        ConvSpec { inc, outc, kernel, stride, pad }
    }

    /// 3x3, stride 1, pad 1.
    pub fn same3(inc: usize, outc: usize) -> Self {
        Self::new(inc, outc, 3, 1, 1)
    }

    /// 1x1, stride 1, pad 0.
    pub fn point(inc: usize, outc: usize) -> Self {
        Self::new(inc, outc, 1, 1, 0)
    }
}

/// Convolution with optional spectral normalization of its weight.
///
/// With `sn` set, the weight used in forward is `W / sigma` where `sigma` is
/// `u^T W v`, `u` the persisted left singular-vector estimate and
/// `v = normalize(W^T u)`, with `W` viewed as `outc x (inc*kh*kw)`. One power
/// iteration refines `u` per training forward. Biases are never normalized.
pub struct ConvLayer<T: Float> {
    pub spec: ConvSpec,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    pub sn_u: Tensor<T>,
    pub sn: bool,
}

fn normalize<T: Float>(v: &mut [T]) {
    let norm = v.iter().map(|&x| x * x).sum::<T>().sqrt();
    let denom = norm + T::lit(1e-12);
    v.iter_mut().for_each(|x| *x = *x / denom);
}

impl<T: Float> ConvLayer<T> {
    pub fn new<R: Rng + ?Sized>(spec: ConvSpec, sn: bool, init: Init, rng: &mut R) -> Result<Self> {
        let weight = init_with_rng(&[spec.outc, spec.inc, spec.kernel, spec.kernel], init, rng)?.requires_grad();
        let bias = Tensor::zeros(&[spec.outc])?.requires_grad();
        let mut u: Vec<T> = (0..spec.outc).map(|_| T::lit(rng.sample(StandardNormal))).collect();
        normalize(&mut u);
        Ok(ConvLayer { spec, weight, bias, sn_u: Tensor::from_vec(&[spec.outc], u)?, sn })
    }

    /// Overwrites the weight and bias (shapes must match the spec).
    pub fn set_weights(&mut self, weight: Vec<T>, bias: Vec<T>) -> Result<()> {
        let s = self.spec;
        self.weight = Tensor::parameter(&[s.outc, s.inc, s.kernel, s.kernel], weight)?;
        self.bias = Tensor::parameter(&[s.outc], bias)?;
        Ok(())
    }

    fn rows_cols(&self) -> (usize, usize) {
        (self.spec.outc, self.spec.inc * self.spec.kernel * self.spec.kernel)
    }

    /// `v = normalize(W^T u)` for the current `u`.
    fn right_vector(&self) -> Vec<T> {
        let (rows, cols) = self.rows_cols();
        let w = self.weight.data();
        let u = self.sn_u.data();
        let mut v = vec![T::zero(); cols];
        for r in 0..rows {
            let ur = u[r];
            for (vc, &wv) in v.iter_mut().zip(&w[r * cols..(r + 1) * cols]) {
                *vc += ur * wv;
            }
        }
        normalize(&mut v);
        v
    }

    /// One power-iteration step on the frozen weight: `u <- normalize(W v)`.
    pub fn power_iteration(&mut self) -> Result<()> {
        let (rows, cols) = self.rows_cols();
        let v = self.right_vector();
        let w = self.weight.data();
        let mut u: Vec<T> = (0..rows)
            .map(|r| w[r * cols..(r + 1) * cols].iter().zip(&v).map(|(&a, &b)| a * b).sum())
            .collect();
        normalize(&mut u);
        self.sn_u = Tensor::from_vec(&[rows], u)?;
        Ok(())
    }

    /// Current estimate of the largest singular value of the reshaped weight.
    pub fn sigma_estimate(&self) -> f64 {
        let (rows, cols) = self.rows_cols();
        let v = self.right_vector();
        let w = self.weight.data();
        let u = self.sn_u.data();
        (0..rows)
            .map(|r| {
                let wv: T = w[r * cols..(r + 1) * cols].iter().zip(&v).map(|(&a, &b)| a * b).sum();
                u[r].as_f64() * wv.as_f64()
            })
            .sum()
    }

    /// Weight used by forward; differentiable with respect to `weight`.
    pub fn effective_weight(&self) -> Result<Tensor<T>> {
        if !self.sn {
            return Ok(self.weight.clone());
        }
        let (rows, cols) = self.rows_cols();
        let u = Tensor::from_vec(&[1, rows], self.sn_u.to_vec())?;
        let v = Tensor::from_vec(&[cols, 1], self.right_vector())?;
        let wmat = self.weight.reshape(&[rows, cols])?;
        let sigma = u.matmul(&wmat.matmul(&v)?)?.reshape(&[1, 1, 1, 1])?;
        self.weight.div(&sigma)
    }

    pub fn forward(&mut self, x: &Tensor<T>, training: bool) -> Result<Tensor<T>> {
        if training && self.sn {
            self.power_iteration()?;
        }
        self.apply(x)
    }

    /// Forward without touching any state.
    pub fn apply(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let w = self.effective_weight()?;
        x.conv2d(&w, Some(&self.bias), self.spec.stride, self.spec.pad)
    }
}

impl<T: Float> Module<T> for ConvLayer<T> {
    fn visit_state(&mut self, prefix: &str, f: &mut dyn FnMut(&str, StateKind, &mut Tensor<T>)) {
        f(&join(prefix, "weight"), StateKind::Param, &mut self.weight);
        f(&join(prefix, "bias"), StateKind::Param, &mut self.bias);
        f(&join(prefix, "sn_u"), StateKind::Buffer, &mut self.sn_u);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn layer(spec: ConvSpec, sn: bool, seed: u64) -> ConvLayer<f64> {
        ConvLayer::new(spec, sn, Init::default(), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    #[test]
    fn identity_point_conv_without_sn() {
        let mut l = layer(ConvSpec::point(3, 3), false, 1);
        let mut w = vec![0.0; 9];
        for i in 0..3 {
            w[i * 3 + i] = 1.0;
        }
        l.set_weights(w, vec![0.0; 3]).unwrap();
        let x = init_with_rng::<f64, _>(&[1, 3, 4, 4], Init::Normal { std: 1.0 }, &mut ChaCha8Rng::seed_from_u64(2))
            .unwrap();
        assert!(l.forward(&x, true).unwrap().bit_eq(&x));
    }

    #[test]
    fn known_sigma_diagonal_weight() {
        // outc=3, inc=3, 1x1: the reshaped weight is diag(4, 2, 1).
        let mut l = layer(ConvSpec::point(3, 3), true, 4);
        let mut w = vec![0.0; 9];
        w[0] = 4.0;
        w[4] = 2.0;
        w[8] = 1.0;
        l.set_weights(w.clone(), vec![0.0; 3]).unwrap();
        for _ in 0..25 {
            l.power_iteration().unwrap();
        }
        let eff = l.effective_weight().unwrap();
        for (e, raw) in eff.data().iter().zip(&w) {
            assert!((e - raw / 4.0).abs() <= 0.02 * (raw / 4.0).abs() + 1e-12);
        }
    }

    #[test]
    fn inference_is_pure() {
        let mut l = layer(ConvSpec::same3(2, 4), true, 5);
        let x = init_with_rng::<f64, _>(&[1, 2, 5, 5], Init::Normal { std: 1.0 }, &mut ChaCha8Rng::seed_from_u64(6))
            .unwrap();
        let a = l.forward(&x, false).unwrap();
        let b = l.forward(&x, false).unwrap();
        assert!(a.bit_eq(&b));
        let c = l.forward(&x, true).unwrap();
        assert!(!a.bit_eq(&c));
    }

    #[test]
    fn sigma_estimates_do_not_decrease() {
        let mut l = layer(ConvSpec::same3(4, 6), true, 8);
        let mut last = l.sigma_estimate();
        for _ in 0..20 {
            l.power_iteration().unwrap();
            let s = l.sigma_estimate();
            assert!(s >= last * (1.0 - 1e-12), "{s} < {last}");
            last = s;
        }
    }
}
