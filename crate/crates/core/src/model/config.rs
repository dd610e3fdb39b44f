use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::ModelError;
use crate::codeword::InputScaling;

/// Architecture of the multi-channel convolutional sliding-window network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArchConfig {
    /// First-layer window width per channel.
    pub window_widths: Vec<usize>,
    pub conv1_kernels: usize,
    /// Second-layer kernel width per channel.
    pub conv2_widths: Vec<usize>,
    pub conv2_kernels: usize,
    /// Width of further convolution layers stacked after the second.
    pub extra_conv_width: usize,
    pub extra_conv_layers: usize,
    pub skip_rows: usize,
    pub fused_dim: usize,
    pub conv_pool_k: usize,
    pub skip_pool_k: usize,
    /// Replaces both pooling sizes when set.
    pub pooling_k_override: Option<usize>,
    pub threshold: f64,
    pub conv1_enabled: bool,
    pub conv2_enabled: bool,
    pub skip_enabled: bool,
    /// One skip transform per channel instead of a single shared one.
    pub per_channel_skip: bool,
    /// ReLU after the fusion layer; `false` leaves it linear.
    pub fusion_relu: bool,
    pub input_scaling: InputScaling,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            window_widths: vec![1, 3, 5],
            conv1_kernels: 128,
            conv2_widths: vec![3, 5, 7],
            conv2_kernels: 64,
            extra_conv_width: 3,
            extra_conv_layers: 0,
            skip_rows: 64,
            fused_dim: 64,
            conv_pool_k: 2,
            skip_pool_k: 1,
            pooling_k_override: None,
            threshold: 0.5,
            conv1_enabled: true,
            conv2_enabled: true,
            skip_enabled: true,
            per_channel_skip: false,
            fusion_relu: true,
            input_scaling: InputScaling::Unit,
        }
    }
}

/// One convolution stage of a path: (in_features, width, kernels).
pub type LayerShape = (usize, usize, usize);

impl ArchConfig {
    /// Default channels with second-layer widths of 3, so 10-frame clips fit.
    pub fn short_clip() -> Self {
        Self {
            conv2_widths: vec![3, 3, 3],
            ..Self::default()
        }
    }

    /// The model-setting variants `a` to `j` of the ablation study.
    pub fn ablation(variant: char) -> Result<Self, ModelError> {
        Self::default().variant(variant)
    }

    /// Applies ablation variant `a` to `j` on top of this configuration.
    pub fn variant(&self, variant: char) -> Result<Self, ModelError> {
        let base = self.clone();
        let cfg = match variant.to_ascii_lowercase() {
            'a' => base,
            'b' => Self {
                skip_enabled: false,
                ..base
            },
            'c' => Self {
                pooling_k_override: Some(1),
                ..base
            },
            'd' => Self {
                pooling_k_override: Some(2),
                ..base
            },
            'e' => Self {
                pooling_k_override: Some(3),
                ..base
            },
            'f' => Self {
                conv1_enabled: false,
                ..base
            },
            'g' => Self {
                conv2_enabled: false,
                ..base
            },
            'h' => Self {
                extra_conv_layers: 1,
                ..base
            },
            'i' => Self {
                extra_conv_layers: 2,
                ..base
            },
            'j' => Self {
                window_widths: vec![1, 3],
                conv2_widths: vec![3, 5],
                ..base
            },
            other => return Err(ModelError::Config(format!("unknown ablation variant '{other}'"))),
        };
        Ok(cfg)
    }

    pub fn ablation_label(variant: char) -> &'static str {
        match variant.to_ascii_lowercase() {
            'a' => "full model",
            'b' => "no skip connection",
            'c' => "max pooling everywhere",
            'd' => "2-max pooling everywhere",
            'e' => "3-max pooling everywhere",
            'f' => "no first convolution layer",
            'g' => "no second convolution layer",
            'h' => "three convolution layers",
            'i' => "four convolution layers",
            'j' => "two channels",
            _ => "unknown",
        }
    }

    pub fn n_channels(&self) -> usize {
        self.window_widths.len()
    }

    pub fn conv_k(&self) -> usize {
        self.pooling_k_override.unwrap_or(self.conv_pool_k)
    }

    pub fn skip_k(&self) -> usize {
        self.pooling_k_override.unwrap_or(self.skip_pool_k)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::Config(m.to_string()));
        if self.window_widths.is_empty() {
            return bad("at least one channel is required");
        }
        if self.conv2_widths.len() != self.window_widths.len() {
            return bad("conv2_widths must list one width per channel");
        }
        if self.window_widths.iter().chain(&self.conv2_widths).any(|&w| w == 0) {
            return bad("kernel widths must be positive");
        }
        if self.conv1_kernels == 0 || self.conv2_kernels == 0 || self.fused_dim == 0 {
            return bad("kernel and feature counts must be positive");
        }
        if self.extra_conv_layers > 0 && self.extra_conv_width == 0 {
            return bad("extra_conv_width must be positive");
        }
        if self.skip_enabled && self.skip_rows == 0 {
            return bad("skip_rows must be positive");
        }
        if self.conv_k() == 0 || self.skip_k() == 0 {
            return bad("pooling k must be positive");
        }
        if !self.conv1_enabled && !self.conv2_enabled && self.extra_conv_layers == 0 {
            return bad("a channel needs at least one convolution layer");
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return bad("threshold must lie in (0, 1)");
        }
        Ok(())
    }

    /// Convolution stages of channel `c`.
    pub fn channel_layers(&self, c: usize) -> Vec<LayerShape> {
        let mut layers = Vec::new();
        let mut in_f = 3;
        if self.conv1_enabled {
            layers.push((in_f, self.window_widths[c], self.conv1_kernels));
            in_f = self.conv1_kernels;
        }
        if self.conv2_enabled {
            layers.push((in_f, self.conv2_widths[c], self.conv2_kernels));
            in_f = self.conv2_kernels;
        }
        for _ in 0..self.extra_conv_layers {
            layers.push((in_f, self.extra_conv_width, self.conv2_kernels));
            in_f = self.conv2_kernels;
        }
        layers
    }

    pub fn skip_paths(&self) -> usize {
        match (self.skip_enabled, self.per_channel_skip) {
            (false, _) => 0,
            (true, false) => 1,
            (true, true) => self.n_channels(),
        }
    }

    /// Pooled feature count of channel `c`.
    pub fn channel_features(&self, c: usize) -> usize {
        self.channel_layers(c).last().map_or(0, |l| l.2) * self.conv_k()
    }

    /// Length of the spliced vector fed to the fusion layer.
    pub fn spliced_dim(&self) -> usize {
        (0..self.n_channels())
            .map(|c| self.channel_features(c))
            .sum::<usize>()
            + self.skip_paths() * self.skip_rows * self.skip_k()
    }

    /// Shortest clip for which every path still yields `k` pooled values.
    pub fn min_clip_len(&self) -> usize {
        let channel = (0..self.n_channels()).map(|c| {
            self.channel_layers(c).iter().map(|l| l.1 - 1).sum::<usize>() + self.conv_k()
        });
        let skip = if self.skip_paths() > 0 { self.skip_k() } else { 1 };
        channel.fold(skip, usize::max)
    }

    /// Hex SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }
}
