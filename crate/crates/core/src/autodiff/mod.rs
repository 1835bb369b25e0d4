//! Reverse-mode automatic differentiation over dense f64 tensors.
//!
//! A [`Tape`] records every operation with its backward closure; calling
//! [`Tape::backward`] walks it in reverse. Parameters live outside the tape in a
//! [`ParamStore`] so one set of weights can drive many forward passes.

mod checkpoint;
mod conv;
pub(crate) mod gemm;
mod gradcheck;
mod ops;
mod params;
mod spectral;
mod tape;
mod tensor;

pub use checkpoint::{Checkpoint, Manifest, TensorEntry, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use conv::{conv2d_backward, conv2d_forward, ConvGeom};
pub use gradcheck::{perturb_all, GradCheck, GradCheckReport};
pub use ops::{sigmoid, silu, softmax_rows};
pub use params::{Init, ParamId, ParamStore, Parameter};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
