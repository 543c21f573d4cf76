//! Hand-differentiated operators and the stem + valid-convolution U-Net.

mod gradcheck;
pub mod io;
pub mod ops;
mod params;
mod tensor;
mod unet;

pub use gradcheck::{grad_check, relative_error, GradCheckOptions, GradCheckReport};
pub use params::{param_specs, NetParams, Param};
pub use tensor::Tensor;
pub use unet::{cube_tensor, predict_map, unet_backward, unet_forward, ForwardCache, NetConfig};
