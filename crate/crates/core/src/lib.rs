//! Two-stream image-to-image translation: content and style streams feeding a
//! generator through element-wise feature denormalization and feature
//! adaptive instance normalization, trained adversarially against multi-scale
//! patch discriminators. Everything runs on the small reverse-mode autodiff
//! engine in [`tensor`].

pub mod error;
pub mod evaluation;
pub mod blocks;
pub mod checkpoint;
pub mod data;
pub mod gradcheck;
pub mod layers;
pub mod losses;
pub mod networks;
pub mod optim;
pub mod selftest;
pub mod tensor;
pub mod train;
pub mod transforms;

pub use error::{Error, Result};
pub use tensor::{no_grad, DType, Float, Gradients, Tape, Tensor};
