use serde::{Deserialize, Serialize};

use super::codebook::QuantizeMode;
use crate::error::{Error, Result};
use crate::skeleton::CameraModel;

/// Architecture and loss settings of the tokenizer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VgmtConfig {
    /// Codebook size `K`.
    pub codes: usize,
    /// Width of each prototype half.
    pub d_half: usize,
    pub heads: usize,
    pub points: usize,
    pub joints: usize,
    /// Side of the square visual feature grid.
    pub grid: usize,
    pub feature_channels: usize,
    /// Width and height of the image plane in pixels.
    pub image_size: (f64, f64),
    /// Blob radius of the joint rendering, in grid cells.
    pub blob_sigma: f64,
    /// Frames per window.
    pub downsample: usize,
    pub mode: QuantizeMode,
    pub beta_s: f64,
    pub beta_v: f64,
    pub beta_commit: f64,
    pub camera: CameraModel,
}

impl Default for VgmtConfig {
    fn default() -> Self {
        Self {
            codes: 256,
            d_half: 32,
            heads: 4,
            points: 4,
            joints: 17,
            grid: 32,
            feature_channels: 16,
            image_size: (1000.0, 1000.0),
            blob_sigma: 1.0,
            downsample: 2,
            mode: QuantizeMode::Fused,
            beta_s: 0.5,
            beta_v: 0.5,
            beta_commit: 0.25,
            camera: CameraModel::default(),
        }
    }
}

impl VgmtConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::invalid(format!("tokenizer config: {m}")));
        if self.codes == 0 || self.codes > u32::MAX as usize / 2 {
            return bad("codes must be positive");
        }
        if self.d_half == 0 || self.joints == 0 || self.grid < 2 || self.downsample == 0 {
            return bad("dimensions must be positive");
        }
        if self.heads == 0 || self.points == 0 || !self.feature_channels.is_multiple_of(self.heads) {
            return bad("feature_channels must be a multiple of heads");
        }
        if [self.beta_s, self.beta_v, self.beta_commit]
            .iter()
            .any(|b| !b.is_finite() || *b < 0.0)
        {
            return bad("loss weights must be non-negative");
        }
        if !(self.image_size.0 > 0.0 && self.image_size.1 > 0.0 && self.blob_sigma > 0.0) {
            return bad("image size and blob radius must be positive");
        }
        Ok(())
    }
}

/// Optimisation settings for tokenizer training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TokenizerTrainConfig {
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub warmup_ratio: f64,
    pub weight_decay: f64,
    pub clip_norm: Option<f64>,
    /// Steps per logging window.
    pub log_every: usize,
    /// Codes unused for this many steps are re-seeded from encoder outputs
    /// of the current batch; 0 disables restarts. No restarts happen in the
    /// last fifth of training.
    pub restart_every: usize,
    pub seed: u64,
}

impl Default for TokenizerTrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch: 16,
            lr: 2e-3,
            warmup_ratio: 0.05,
            weight_decay: 0.0,
            clip_norm: Some(1.0),
            log_every: 50,
            restart_every: 100,
            seed: 0,
        }
    }
}

impl TokenizerTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.batch == 0 || self.log_every == 0 {
            return Err(Error::invalid("steps, batch and log_every must be positive"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) || !(0.0..1.0).contains(&self.warmup_ratio) {
            return Err(Error::invalid("learning rate must be positive, warmup ratio in [0, 1)"));
        }
        Ok(())
    }
}
