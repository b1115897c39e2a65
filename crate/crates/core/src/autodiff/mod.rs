//! Minimal reverse-mode autodiff over channel-major 4-D tensors.

mod adam;
pub mod gradcheck;
pub(crate) mod kernels;
mod params;
mod real;
mod tape;
mod tensor;

pub use adam::Adam;
pub use gradcheck::{gradcheck, op_suite, GradCheckOptions, GradCheckReport, SuiteReport, TensorCheck};
pub use params::{ConvParams, Param, ParamId, ParamStore};
pub use real::Real;
pub use tape::{Eager, FixedKernel, Graph, Tape, Var};
pub use tensor::{Shape, Tensor};
