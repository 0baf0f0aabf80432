//! Dense 64-bit kernel for the fixed distillation graph.
//!
//! There is no general autodiff here: every layer pairs a forward function
//! with a hand-written backward that accumulates into [`ParamTensor::grad`].
//! Gradients are zeroed only by an optimizer step, so several loss terms can
//! add into the same parameter before it is updated.

mod dropout;
mod gradcheck;
mod lbfgs;
mod ops;
mod optim;
mod tensor;

pub use dropout::DropoutMask;
pub use gradcheck::finite_diff_check;
pub use lbfgs::{lbfgs, LbfgsOutcome, LbfgsSettings};
pub use ops::{
    affine, affine_backward, log_softmax, silu, silu_backward, silu_scalar, softmax, softmax_rows,
    Linear,
};
pub use optim::{AdamW, ParamTensor, Parameters};
pub use tensor::Tensor2;
