//! Differentiable building blocks: 3-D convolution (grouped, strided),
//! pointwise activations, offset-axis softmax, pooling, the linear head,
//! losses, and switchable batch normalization.

mod conv;
mod init;
mod loss;
mod norm;
mod pointwise;
mod pool;

pub use conv::{conv3d, conv3d_forward, conv_out_dim, linear, ConvSpec};
pub use init::uniform_fan_in;
pub use loss::{accuracy, bce_with_logits, cross_entropy};
pub use norm::{
    add_cvec, batchnorm, batchnorm_init, channel_mean, mul_cvec, rsqrt_shift, BatchNorm, BN_EPS,
    BN_MOMENTUM,
};
pub use pointwise::{relu, selu, softmax_over_offsets, tanh, SELU_ALPHA, SELU_LAMBDA};
pub use pool::{global_avg_pool, maxpool3d};
