//! Symmetric rotation-equivariant (SRE) convolutions and a D4-equivariant
//! U-Net for vessel segmentation, implemented from scratch: band-parameterised
//! kernels, dense and band-pooled convolution paths with hand-written
//! backward passes, AdamW training, rotated-test evaluation and
//! parameter/FLOP accounting.

pub mod data;
pub mod error;
pub mod kernel;
pub mod metrics;
pub mod net;
pub mod ops;
pub mod optim;
pub mod par;
pub mod real;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
pub use kernel::{
    build_band_partition, expand_kernel, expansion_backward, BandPartition, BandTheta,
    SreConvParams,
};
pub use net::{build_unet, ConvType, Network, UNetConfig};
pub use real::Real;
pub use tensor::{FlipAxis, Tensor4, D4};
