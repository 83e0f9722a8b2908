//! Trainable layer primitives and the state-visiting trait shared by every
//! network component.

mod conv;
mod init;
mod norm;

pub use conv::{ConvLayer, ConvSpec};
pub use init::{init_params, init_with_rng, Init, LRELU_GAIN};
pub use norm::{batch_stats, instance_stats, BatchNorm, InstanceNorm, NORM_EPS};

use crate::tensor::{Float, Tensor};

/// Negative slope used by every leaky ReLU in the networks.
pub const LRELU_SLOPE: f64 = 0.2;

/// Whether a visited tensor is trained by the optimizer or is running state.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StateKind {
    Param,
    Buffer,
}

/// Anything holding named parameters and buffers.
///
/// Visiting order is fixed by construction, which is what makes optimizer
/// state and checkpoints deterministic.
pub trait Module<T: Float> {
    fn visit_state(&mut self, prefix: &str, f: &mut dyn FnMut(&str, StateKind, &mut Tensor<T>));

    /// Snapshot of all (name, kind, tensor) triples.
    fn state(&mut self, prefix: &str) -> Vec<(String, StateKind, Tensor<T>)> {
        let mut out = Vec::new();
        self.visit_state(prefix, &mut |name, kind, t| out.push((name.to_string(), kind, t.clone())));
        out
    }

    /// Puts back a snapshot taken by [`Module::state`] on this module.
    fn restore_state(&mut self, saved: Vec<(String, StateKind, Tensor<T>)>) {
        let mut it = saved.into_iter();
        self.visit_state("", &mut |_, _, t| {
            if let Some((_, _, s)) = it.next() {
                *t = s;
            }
        });
    }

    /// Trainable leaves only.
    fn params(&mut self, prefix: &str) -> Vec<(String, Tensor<T>)> {
        self.state(prefix)
            .into_iter()
            .filter(|(_, k, _)| *k == StateKind::Param)
            .map(|(n, _, t)| (n, t))
            .collect()
    }

    fn param_count(&mut self) -> usize {
        self.params("").iter().map(|(_, t)| t.numel()).sum()
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}
