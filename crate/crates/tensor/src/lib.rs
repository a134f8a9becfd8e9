//! Minimal CPU tensor tape with reverse-mode automatic differentiation.
//!
//! Everything the prosody model needs and nothing more: matrix products,
//! attention, normalization layers, depthwise convolution, rotary rotation,
//! row gather/scatter and a few loss primitives. Gradients are verified with
//! [`gradcheck`] in double precision; training runs in single precision.

mod backward;
pub mod error;
pub mod gradcheck;
mod ops;
pub mod params;
pub mod real;
pub mod tape;
pub mod tensor;

pub use error::{Result, TensorError};
pub use gradcheck::{
    grad_check, grad_check_params, grad_check_with_params, GradCheckOptions, GradCheckReport,
};
pub use ops::{GRN_EPS, LAYER_NORM_EPS, MASKED_LOGIT, ROTARY_BASE};
pub use params::{Gradients, ParamId, ParamStore, Parameter};
pub use real::Real;
pub use tape::{Tape, Var};
pub use tensor::Tensor;
