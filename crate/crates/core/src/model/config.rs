use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Default pyramid widths; the fifth entry is only used by depth-5 builds.
pub const DEFAULT_CHANNELS: [usize; 5] = [64, 96, 144, 192, 256];

/// Architecture, ablation toggles and desk-scale width multiplier.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Number of pyramid levels, equal to the number of flow blocks.
    pub depth: usize,
    /// Nominal per-level feature widths before `width_multiplier`.
    pub channels: Vec<usize>,
    pub first_layer_kernel: usize,
    pub other_kernels: usize,
    /// Stride-1 convolutions per flow block.
    pub ifblock_convs: usize,
    pub deconv_kernel: usize,
    /// Flow-block hidden width as a multiple of its pyramid level's width.
    pub block_width_factor: usize,
    /// Feed warped per-frame features to the finer blocks.
    pub use_frame_features: bool,
    /// Feed the guide-fused intermediate feature to the finer blocks.
    pub use_intermediate_feature: bool,
    /// Add the upsampled coarser flow to each block's flow output.
    pub use_flow_residual: bool,
    pub width_multiplier: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            depth: 4,
            channels: DEFAULT_CHANNELS[..4].to_vec(),
            first_layer_kernel: 7,
            other_kernels: 3,
            ifblock_convs: 6,
            deconv_kernel: 4,
            block_width_factor: 2,
            use_frame_features: true,
            use_intermediate_feature: true,
            use_flow_residual: true,
            width_multiplier: 1.0,
        }
    }
}

impl ModelConfig {
    /// Full-width configuration with `depth` levels.
    pub fn with_depth(depth: usize) -> Self {
        Self { depth, channels: DEFAULT_CHANNELS[..depth.clamp(1, 5)].to_vec(), ..Self::default() }
    }

    /// Desk-scale configuration: default architecture shrunk by `multiplier`.
    pub fn desk(multiplier: f64) -> Self {
        Self { width_multiplier: multiplier, ..Self::default() }
    }

    /// Change depth, extending the channel schedule from the defaults if needed.
    pub fn set_depth(&mut self, depth: usize) {
        self.depth = depth;
        while self.channels.len() < depth && self.channels.len() < DEFAULT_CHANNELS.len() {
            self.channels.push(DEFAULT_CHANNELS[self.channels.len()]);
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=5).contains(&self.depth) {
            return Err(Error::config(format!("depth must be in [1, 5], got {}", self.depth)));
        }
        if self.channels.len() < self.depth {
            return Err(Error::config(format!(
                "depth {} needs {} channel entries, got {}",
                self.depth,
                self.depth,
                self.channels.len()
            )));
        }
        if self.channels.windows(2).any(|p| p[0] >= p[1]) {
            return Err(Error::config("channels must be strictly increasing"));
        }
        if !(self.width_multiplier > 0.0) || !self.width_multiplier.is_finite() {
            return Err(Error::config("width_multiplier must be positive"));
        }
        for (i, &c) in self.channels.iter().take(self.depth).enumerate() {
            if (c as f64) * self.width_multiplier < 4.0 {
                return Err(Error::config(format!(
                    "width_multiplier {} leaves level {i} with fewer than 4 channels",
                    self.width_multiplier
                )));
            }
        }
        if self.first_layer_kernel % 2 == 0 || self.other_kernels % 2 == 0 {
            return Err(Error::config("convolution kernels must be odd"));
        }
        if self.deconv_kernel < 2 || self.deconv_kernel % 2 != 0 {
            return Err(Error::config("deconv_kernel must be even and at least 2"));
        }
        if self.ifblock_convs < 3 {
            return Err(Error::config("ifblock_convs must be at least 3 to host the skip"));
        }
        if self.block_width_factor == 0 {
            return Err(Error::config("block_width_factor must be positive"));
        }
        Ok(())
    }

    /// Effective feature width of pyramid level `level`.
    pub fn width(&self, level: usize) -> usize {
        ((self.channels[level] as f64 * self.width_multiplier).round() as usize).max(1)
    }

    pub fn block_hidden(&self, level: usize) -> usize {
        self.width(level) * self.block_width_factor
    }

    /// Concatenated input channels of the flow block at `level`.
    pub fn block_in_channels(&self, level: usize) -> usize {
        let c = self.width(level);
        if level + 1 == self.depth {
            return 2 * c;
        }
        let mut n = 2 * c;
        if self.use_frame_features {
            n += 2 * c;
        }
        if self.use_intermediate_feature {
            n += c;
        }
        n
    }

    /// Flow block outputs: two flows and a guide logit, plus a residual at level 0.
    pub fn block_out_channels(&self, level: usize) -> usize {
        if level == 0 {
            8
        } else {
            5
        }
    }

    /// Spatial divisibility required of network inputs.
    pub fn alignment(&self) -> usize {
        1 << self.depth
    }

    /// Stable short hash of the configuration.
    pub fn fingerprint(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serialises");
        let digest = Sha256::digest(canonical.as_bytes());
        hex::encode(&digest[..8])
    }
}
