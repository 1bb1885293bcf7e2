use crate::error::{bail, Result};

/// Architecture hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    pub patch_size: usize,
    pub signal_length: usize,
    pub d_model: usize,
    pub ffn_dim: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub heads: usize,
    pub dropout: f64,
    pub mask_ratio: f64,
}

impl ModelConfig {
    /// Full-size configuration: one hour at 2 Hz, 5+5 layers of width 512.
    pub fn paper() -> Self {
        Self {
            patch_size: 30,
            signal_length: 7200,
            d_model: 512,
            ffn_dim: 1024,
            encoder_layers: 5,
            decoder_layers: 5,
            heads: 16,
            dropout: 0.1,
            mask_ratio: 0.15,
        }
    }

    /// Desk-scale configuration: 16 minutes of signal, 2+2 layers of width 64.
    pub fn toy() -> Self {
        Self {
            patch_size: 30,
            signal_length: 1920,
            d_model: 64,
            ffn_dim: 128,
            encoder_layers: 2,
            decoder_layers: 2,
            heads: 4,
            dropout: 0.1,
            mask_ratio: 0.15,
        }
    }

    /// Smallest useful configuration, used for gradient checks.
    pub fn tiny() -> Self {
        Self {
            patch_size: 4,
            signal_length: 32,
            d_model: 8,
            ffn_dim: 16,
            encoder_layers: 1,
            decoder_layers: 1,
            heads: 2,
            dropout: 0.0,
            mask_ratio: 0.15,
        }
    }

    pub fn n_patches(&self) -> usize {
        self.signal_length / self.patch_size
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        if self.patch_size == 0 || self.signal_length == 0 || self.signal_length % self.patch_size != 0 {
            bail!(Config, "signal length {} is not divisible by patch size {}", self.signal_length, self.patch_size);
        }
        if self.heads == 0 || self.d_model == 0 || self.d_model % self.heads != 0 {
            bail!(Config, "d_model {} is not divisible by {} heads", self.d_model, self.heads);
        }
        if self.ffn_dim == 0 || self.encoder_layers == 0 || self.decoder_layers == 0 {
            bail!(Config, "ffn_dim and layer counts must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            bail!(Config, "dropout {} outside [0, 1)", self.dropout);
        }
        if !(self.mask_ratio > 0.0 && self.mask_ratio < 1.0) {
            bail!(Config, "mask ratio {} outside (0, 1)", self.mask_ratio);
        }
        Ok(())
    }
}
