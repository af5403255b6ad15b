//! Tensors, parameter vectors and reverse-mode differentiation.

pub mod functional;
pub mod params;
pub mod tape;
pub mod tensor;

pub use functional::{
    fd_epsilon_default, grad, hvp, value, value_and_grad, HvpBackend, ScalarFn, SegmentVars,
};
pub use params::{Layout, ParamVector, Segment};
pub use tape::{Tape, Var};
pub use tensor::Tensor;
