//! Forward and backward kernels for the operations the networks use.
//! Each kernel is a pure function of its inputs.

mod conv;
mod gemm;
mod im2col;
mod loss;
mod norm;
mod pointwise;
mod pool;

pub use conv::{conv2d, conv2d_backward, transpose_conv2, transpose_conv2_backward, UP_PAD, UP_STRIDE};
pub use loss::{softmax2, weighted_logloss, weighted_logloss_backward};
pub use norm::{
    batch_norm_eval, batch_norm_train, batch_norm_train_backward, eval_affine, BatchStats, BnSaved, RunningStats,
    BN_EPS, BN_MOMENTUM,
};
pub use pointwise::{
    abs_diff, abs_diff_backward, apply_mask, check_dropout_rate, concat_channels, dropout_mask, relu, relu_backward,
    split_channels,
};
pub use pool::{max_pool2, max_pool2_backward};
