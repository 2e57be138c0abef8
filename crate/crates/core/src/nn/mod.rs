//! Network layers recorded on a [`Tape`](crate::tape::Tape).

mod conv;
mod loss;
mod norm;
mod resample;

pub use conv::{conv2d, conv2d_eval, pad2d, pad_tensor, ConvParams, ConvSpec, PaddingMode};
pub use loss::softmax_cross_entropy;
pub use norm::{batchnorm, BatchNormParams, BnMode, RunningStats, DEFAULT_EPS, DEFAULT_MOMENTUM};
pub use resample::{concat_channels, maxpool2, upsample_bilinear2, upsample_tensor};
