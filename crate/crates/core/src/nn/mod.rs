//! Layer primitives with hand-written backward passes.

pub mod activation;
pub mod adam;
pub mod concat;
pub mod conv;
pub mod conv_transpose;
pub mod linear;
pub mod pool;

pub use activation::{relu, relu_backward, ReluCache};
pub use adam::{AdamConfig, AdamState};
pub use concat::{concat_backward, concat_channels, ConcatCache};
pub use conv::{conv2d_backward, conv2d_forward, Conv2dCache, Conv2dGrads};
pub use conv_transpose::{
    convtranspose2d_backward, convtranspose2d_forward, ConvTranspose2dCache, ConvTranspose2dGrads,
};
pub use linear::{linear_backward, linear_forward, LinearCache, LinearGrads};
pub use pool::{maxpool2d_backward, maxpool2d_forward, PoolCache};
