//! Dense f64 tensors and the small set of numeric routines the model needs.

mod gradcheck;
mod ops;
mod rng;
mod tensor;

pub use gradcheck::{finite_diff_check, finite_diff_check_per_tensor, relative_error};
pub use ops::{dropout_mask, sgd_step, sgd_update, xavier_bound, xavier_init};
pub use rng::Rng;
pub use tensor::{dot, matmul, softmax, softmax_slice, Tensor};

pub(crate) use tensor::{axpy_slice, sigmoid};
