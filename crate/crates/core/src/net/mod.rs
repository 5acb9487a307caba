//! The SRE U-Net and its dense twin.

pub mod config;
pub mod count;
pub mod graph;
mod init;

pub use config::{ConvType, UNetConfig, DEFAULT_BASE_CHANNELS};
pub use count::{count_flops, FlopReport, LayerCount, OpCount};
pub use graph::{build_unet, ConvKind, ConvLayer, Gradients, Network, Node, Param};
