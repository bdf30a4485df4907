//! Dense networks with reverse-mode gradients for parameters and inputs.

mod check;
mod mlp;
mod params;
mod tensor;

pub use check::{
    central_difference, finite_diff_check, max_relative_error, relative_error, FdReport,
    REL_ERR_FLOOR,
};
pub use mlp::{Activation, Layer, Mlp, NetSpec, Precision, Real, Trace};
pub use params::ParamStore;
pub use tensor::Tensor;
