//! Numeric primitives with explicit forward and backward passes.

pub mod activation;
pub mod conv;
pub mod counter;
pub mod gemm;
pub mod pool;
pub mod sre;
pub mod upsample;

pub use activation::{foreground_probability, relu, relu_backward, softmax_ce_loss};
pub use conv::{
    conv2d_backward, conv2d_fast, conv2d_fast_counted, conv2d_ref, conv2d_ref_counted, ConvGrads,
    ConvSpec,
};
pub use counter::OpCounter;
pub use pool::{maxpool2, maxpool2_backward, ArgmaxRecord};
pub use sre::{sre_conv_backward, sre_conv_band_pooled, sre_conv_band_pooled_counted, SreGrads};
pub use upsample::{upsample2_linear, upsample2_linear_backward};
