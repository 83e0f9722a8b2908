use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::Result;
use crate::tensor::{Float, Tensor};

/// He gain for leaky ReLU with slope 0.2: sqrt(2 / (1 + 0.2^2)).
pub const LRELU_GAIN: f64 = 1.386_750_490_563_073;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// Gaussian with std = gain / sqrt(fan_in); fan_in is the product of all
    /// but the leading extent.
    FanIn { gain: f64 },
    Normal { std: f64 },
    Zeros,
}

impl Default for Init {
    fn default() -> Self {
        Init::FanIn { gain: LRELU_GAIN }
    }
}

impl Init {
    pub fn std_for(&self, shape: &[usize]) -> f64 {
        match *self {
            Init::FanIn { gain } => {
                let fan_in: usize = shape.iter().skip(1).product::<usize>().max(1);
                gain / (fan_in as f64).sqrt()
            }
            Init::Normal { std } => std,
            Init::Zeros => 0.0,
        }
    }
}

pub fn init_with_rng<T: Float, R: Rng + ?Sized>(shape: &[usize], scheme: Init, rng: &mut R) -> Result<Tensor<T>> {
    let n: usize = shape.iter().product();
    let std = scheme.std_for(shape);
    let data = match scheme {
        Init::Zeros => vec![T::zero(); n],
        _ => (0..n).map(|_| T::lit(std * rng.sample::<f64, _>(StandardNormal))).collect(),
    };
    Tensor::from_vec(shape, data)
}

/// Deterministic parameter initialization from a seed.
pub fn init_params<T: Float>(shape: &[usize], scheme: Init, seed: u64) -> Result<Tensor<T>> {
    init_with_rng(shape, scheme, &mut ChaCha8Rng::seed_from_u64(seed))
}
