use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConvType {
    /// Symmetric band-parameterised kernels.
    Sre,
    /// Ordinary dense kernels of the same sizes.
    Standard,
}

impl std::fmt::Display for ConvType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ConvType::Sre => "sre",
            ConvType::Standard => "standard",
        })
    }
}

/// U-Net shape. Level `l` has `base_channels · 2^l` channels and uses kernel
/// size `k_list[l]` in both its encoder and decoder blocks.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UNetConfig {
    pub k_list: Vec<usize>,
    pub base_channels: usize,
    pub depth: usize,
    pub conv_type: ConvType,
    pub in_channels: usize,
    pub out_classes: usize,
    /// Kernel size of the classification head; `1` selects a 1×1 dense conv.
    pub final_k: usize,
    pub bias: bool,
}

/// Base width giving ≈0.12M parameters for the `[9, 7, 5]` SRE network.
pub const DEFAULT_BASE_CHANNELS: usize = 22;

impl Default for UNetConfig {
    fn default() -> Self {
        Self {
            k_list: vec![9, 7, 5],
            base_channels: DEFAULT_BASE_CHANNELS,
            depth: 2,
            conv_type: ConvType::Sre,
            in_channels: 3,
            out_classes: 2,
            final_k: 5,
            bias: true,
        }
    }
}

impl UNetConfig {
    pub fn sre(k_list: Vec<usize>, base_channels: usize) -> Self {
        Self {
            k_list,
            base_channels,
            ..Self::default()
        }
    }

    /// Same architecture with dense kernels.
    pub fn standard_twin(&self) -> Self {
        Self {
            conv_type: ConvType::Standard,
            ..self.clone()
        }
    }

    /// The dense 3×3 U-Net used as the conventional parameter baseline
    /// (≈0.47M parameters at 32 base channels).
    pub fn reference_unet() -> Self {
        Self {
            k_list: vec![3, 3, 3],
            base_channels: 32,
            conv_type: ConvType::Standard,
            final_k: 1,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(self.depth >= 1, Config, "depth must be >= 1");
        ensure!(
            self.k_list.len() == self.depth + 1,
            Config,
            "k_list has {} entries, depth {} needs {}",
            self.k_list.len(),
            self.depth,
            self.depth + 1
        );
        let min_k = match self.conv_type {
            ConvType::Sre => 3,
            ConvType::Standard => 1,
        };
        for &k in &self.k_list {
            ensure!(
                k % 2 == 1 && k >= min_k,
                Config,
                "kernel size {k} must be odd and >= {min_k} for {} convs",
                self.conv_type
            );
        }
        ensure!(
            self.final_k == 1 || (self.final_k % 2 == 1 && self.final_k >= min_k),
            Config,
            "final_k {} must be 1 or an odd size >= {min_k}",
            self.final_k
        );
        ensure!(
            self.base_channels >= 1,
            Config,
            "base_channels must be >= 1"
        );
        ensure!(self.in_channels >= 1, Config, "in_channels must be >= 1");
        ensure!(
            self.out_classes == 2,
            Config,
            "only 2 output classes are supported"
        );
        Ok(())
    }

    /// Spatial dims must be divisible by this.
    pub fn size_multiple(&self) -> usize {
        1 << self.depth
    }

    pub fn channels_at(&self, level: usize) -> usize {
        self.base_channels << level
    }
}
