//! Differentiable operations on tape variables.

mod activation;
mod channel;
mod conv;
mod elementwise;
mod loss;
mod norm;
mod pool;
mod upsample;

pub use activation::relu;
pub use channel::{channel_concat, channel_shuffle, channel_split, narrow_channels, shuffle_permutation};
pub use conv::{conv2d, ConvParams};
pub use elementwise::{add, mul, sub, sum, weighted_sum};
pub use loss::softmax_cross_entropy;
pub use norm::{batchnorm2d, BatchNormConfig, BnMode, RunningStats};
pub use pool::{global_avg_pool, maxpool2d};
pub use upsample::upsample_bilinear;
