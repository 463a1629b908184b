//! Dense 4-D tensor math with analytic backward passes and a
//! finite-difference gradient checker.
//!
//! Everything accumulates in `f64`. Operations are pure functions; backward
//! functions take the forward inputs (or outputs, where cheaper) explicitly
//! instead of recording a tape.

mod conv;
mod dense;
mod gradcheck;
mod softmax;
mod tensor;

pub use conv::{conv2d, conv2d_backward, Conv2dSpec, Padding};
pub use dense::{
    fully_connected, fully_connected_backward, global_avg_pool, global_avg_pool_backward, relu,
    relu_backward, sigmoid, sigmoid_backward, sigmoid_scalar,
};
pub use gradcheck::{grad_check, rel_err, GradReport};
pub use softmax::{softmax_normalize, softmax_normalize_backward, KernelLogits};
pub use tensor::Tensor;

pub(crate) use conv::source_index;
