//! Numerical kernels: convolution, resize, pooling, concatenation,
//! normalization, softmax. Each pairs a forward with an analytic backward.

pub mod concat;
pub mod conv;
pub mod norm;
pub mod pool;
pub mod resize;
pub mod softmax;

pub use concat::concat_channels;
pub use conv::{conv2d, conv_output_shape, ConvParams};
pub use norm::group_norm;
pub use pool::adaptive_avg_pool;
pub use resize::bilinear_resize;
pub use softmax::softmax_channels;
