//! Central finite-difference gradient checking in f64.

use crate::error::Result;
use crate::tensor::{no_grad, Tensor};

/// Outcome of comparing autodiff gradients with central differences.
#[derive(Debug, Clone)]
pub struct GradReport {
    /// Elements compared (those with a gradient magnitude above the floor).
    pub checked: usize,
    pub max_rel_err: f64,
    /// (input index, flat element index) of the worst element.
    pub worst: Option<(usize, usize)>,
}

impl GradReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err < tol
    }
}

/// Gradients with magnitude at or below this are not compared.
pub const GRAD_FLOOR: f64 = 1e-8;

/// Checks d f(inputs) / d inputs for a scalar-valued `f` with step `h`.
///
/// `inputs` are taken as values; each is re-wrapped as a tracked leaf.
pub fn check<F>(f: F, inputs: &[Tensor<f64>], h: f64) -> Result<GradReport>
where
    F: Fn(&[Tensor<f64>]) -> Result<Tensor<f64>>,
{
    let leaves: Vec<Tensor<f64>> = inputs.iter().map(|t| t.detach().requires_grad()).collect();
    let grads = f(&leaves)?.backward()?;
    let mut report = GradReport { checked: 0, max_rel_err: 0.0, worst: None };
    for (which, leaf) in leaves.iter().enumerate() {
        let analytic = grads.wrt(leaf);
        let base = leaf.to_vec();
        for i in 0..base.len() {
            let eval = |delta: f64| -> Result<f64> {
                let mut v = base.clone();
                v[i] += delta;
                let probe = Tensor::from_vec(leaf.shape(), v)?;
                let args: Vec<Tensor<f64>> = leaves
                    .iter()
                    .enumerate()
                    .map(|(j, t)| if j == which { probe.clone() } else { t.detach() })
                    .collect();
                Ok(no_grad(|| f(&args))?.item())
            };
            let numeric = (eval(h)? - eval(-h)?) / (2.0 * h);
            let a = analytic.data()[i];
            let scale = a.abs().max(numeric.abs());
            if scale <= GRAD_FLOOR {
                continue;
            }
            report.checked += 1;
            let rel = (a - numeric).abs() / scale;
            if report.worst.is_none() || rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst = Some((which, i));
            }
        }
    }
    Ok(report)
}

/// Projects a tensor-valued output onto a fixed pseudo-random direction so
/// every output element contributes to the checked scalar.
pub fn project(out: &Tensor<f64>, seed: u64) -> Result<Tensor<f64>> {
    let weights: Vec<f64> = (0..out.numel())
        .map(|i| {
            let x = (i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ seed.wrapping_mul(0xD1B5_4A32_D192_ED03);
            ((x >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        })
        .collect();
    out.mul(&Tensor::from_vec(out.shape(), weights)?)?.sum_all()
}
