use super::{join, Module, StateKind};
use crate::error::Result;
use crate::tensor::{Float, Tensor};

/// Stabilizer added to every variance before the square root.
pub const NORM_EPS: f64 = 1e-5;

fn stats_over<T: Float>(z: &Tensor<T>, axes: &[usize], eps: f64) -> Result<(Tensor<T>, Tensor<T>)> {
    let mu = z.mean_axes(axes, true)?;
    // Centered second moment: algebraically E[z^2] - mu^2, without cancellation.
    let var = z.sub(&mu)?.square()?.mean_axes(axes, true)?;
    let sigma = var.add_scalar(eps)?.sqrt()?;
    Ok((mu, sigma))
}

/// Per-channel mean and standard deviation over (N, H, W), shaped `[1, L, 1, 1]`.
fn batch_stats_keep<T: Float>(z: &Tensor<T>, eps: f64) -> Result<(Tensor<T>, Tensor<T>)> {
    z.dims4("batch_stats")?;
    stats_over(z, &[0, 2, 3], eps)
}

/// Per-channel batch statistics `(mu, sigma)`, each of shape `[L]`; `sigma`
/// carries `eps` under the square root.
pub fn batch_stats<T: Float>(z: &Tensor<T>, eps: f64) -> Result<(Tensor<T>, Tensor<T>)> {
    let (_, l, _, _) = z.dims4("batch_stats")?;
    let (mu, sigma) = batch_stats_keep(z, eps)?;
    Ok((mu.reshape(&[l])?, sigma.reshape(&[l])?))
}

/// Per-(sample, channel) statistics over (H, W), each shaped `[N, L, 1, 1]`.
pub fn instance_stats<T: Float>(z: &Tensor<T>, eps: f64) -> Result<(Tensor<T>, Tensor<T>)> {
    z.dims4("instance_stats")?;
    stats_over(z, &[2, 3], eps)
}

/// Batch normalization without affine parameters.
pub struct BatchNorm<T: Float> {
    pub running_mean: Tensor<T>,
    pub running_std: Tensor<T>,
    pub eps: f64,
    pub momentum: f64,
}

impl<T: Float> BatchNorm<T> {
    pub fn new(channels: usize) -> Result<Self> {
        Ok(BatchNorm {
            running_mean: Tensor::zeros(&[channels])?,
            running_std: Tensor::ones(&[channels])?,
            eps: NORM_EPS,
            momentum: 0.1,
        })
    }

    pub fn channels(&self) -> usize {
        self.running_mean.numel()
    }

    /// Normalizes with batch statistics in training mode (and folds them into
    /// the running estimates), with running statistics otherwise.
    pub fn forward(&mut self, z: &Tensor<T>, training: bool) -> Result<Tensor<T>> {
        let (_, l, _, _) = z.dims4("batchnorm")?;
        if l != self.channels() {
            return Err(crate::Error::shape(
                "batchnorm",
                format!("input has {l} channels, layer has {}", self.channels()),
            ));
        }
        if training {
            let (mu, sigma) = batch_stats_keep(z, self.eps)?;
            let m = T::lit(self.momentum);
            let keep = T::one() - m;
            let rm = self
                .running_mean
                .data()
                .iter()
                .zip(mu.data())
                .map(|(&r, &b)| keep * r + m * b)
                .collect();
            let rs = self
                .running_std
                .data()
                .iter()
                .zip(sigma.data())
                .map(|(&r, &b)| keep * r + m * b)
                .collect();
            self.running_mean = Tensor::from_vec(&[l], rm)?;
            self.running_std = Tensor::from_vec(&[l], rs)?;
            z.sub(&mu)?.div(&sigma)
        } else {
            self.infer(z)
        }
    }

    /// Inference-mode normalization; does not touch state.
    pub fn infer(&self, z: &Tensor<T>) -> Result<Tensor<T>> {
        let l = self.channels();
        let mu = self.running_mean.reshape(&[1, l, 1, 1])?;
        let sigma = self.running_std.reshape(&[1, l, 1, 1])?;
        z.sub(&mu)?.div(&sigma)
    }
}

impl<T: Float> Module<T> for BatchNorm<T> {
    fn visit_state(&mut self, prefix: &str, f: &mut dyn FnMut(&str, StateKind, &mut Tensor<T>)) {
        f(&join(prefix, "running_mean"), StateKind::Buffer, &mut self.running_mean);
        f(&join(prefix, "running_std"), StateKind::Buffer, &mut self.running_std);
    }
}

/// Instance normalization without affine parameters.
#[derive(Debug, Clone, Copy)]
pub struct InstanceNorm {
    pub eps: f64,
}

impl Default for InstanceNorm {
    fn default() -> Self {
        InstanceNorm { eps: NORM_EPS }
    }
}

impl InstanceNorm {
    pub fn forward<T: Float>(&self, z: &Tensor<T>) -> Result<Tensor<T>> {
        let (mu, sigma) = instance_stats(z, self.eps)?;
        z.sub(&mu)?.div(&sigma)
    }
}
