use serde::{Deserialize, Serialize};

use crate::corpus::PHONEME_CLASSES;
use crate::error::{Error, Result};

/// Architecture hyperparameters of the conditional WaveNet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaveNetConfig {
    /// Number of mu-law classes Q.
    pub quantization: u16,
    pub mu: f64,
    pub residual_channels: usize,
    pub skip_channels: usize,
    pub dilation_cycle: Vec<usize>,
    /// How many times `dilation_cycle` is repeated.
    pub cycles: usize,
    pub kernel_width: usize,
    pub embedding_dim: usize,
    pub frame_stride: usize,
    /// Rows of the speaker-embedding table; 0 for a table-free model whose
    /// embedding always comes from outside.
    pub num_speakers: usize,
    pub phoneme_classes: usize,
}

impl Default for WaveNetConfig {
    fn default() -> Self {
        Self {
            quantization: 256,
            mu: 255.0,
            residual_channels: 32,
            skip_channels: 64,
            dilation_cycle: vec![1, 2, 4, 8, 16],
            cycles: 2,
            kernel_width: 2,
            embedding_dim: 16,
            frame_stride: 64,
            num_speakers: 8,
            phoneme_classes: PHONEME_CLASSES,
        }
    }
}

impl WaveNetConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.quantization < 2 {
            return bad("quantization must be at least 2");
        }
        if self.embedding_dim == 0 {
            return bad("embedding dimension must be positive");
        }
        if self.residual_channels == 0 || self.skip_channels == 0 {
            return bad("channel counts must be positive");
        }
        if self.kernel_width == 0 || self.frame_stride == 0 {
            return bad("kernel width and frame stride must be positive");
        }
        if self.layers() == 0 {
            return bad("at least one residual block is required");
        }
        if self.dilation_cycle.contains(&0) {
            return bad("dilations must be positive");
        }
        if self.phoneme_classes == 0 {
            return bad("phoneme inventory must be nonempty");
        }
        Ok(())
    }

    pub fn dilations(&self) -> Vec<usize> {
        self.dilation_cycle
            .iter()
            .copied()
            .cycle()
            .take(self.dilation_cycle.len() * self.cycles)
            .collect()
    }

    pub fn layers(&self) -> usize {
        self.dilation_cycle.len() * self.cycles
    }

    /// `1 + (K - 1) * sum(dilations)`.
    pub fn receptive_field(&self) -> usize {
        1 + (self.kernel_width - 1) * self.dilations().iter().sum::<usize>()
    }

    /// Local conditioning channels: phoneme one-hot, normalized log f0 and
    /// the voicing flag.
    pub fn local_channels(&self) -> usize {
        self.phoneme_classes + 2
    }

    pub fn upsample_width(&self) -> usize {
        2 * self.frame_stride
    }
}
