use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::skeleton::Task;

/// Architecture of the motion language model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LmConfig {
    pub layers: usize,
    pub heads: usize,
    pub model_dim: usize,
    pub ffn_dim: usize,
    pub context_length: usize,
    /// Channels of the tokenizer's visual feature maps.
    pub visual_channels: usize,
    /// Side of the pooled grid of visual tokens per window.
    pub pool_grid: usize,
    pub fusion_heads: usize,
    pub fusion_ffn_dim: usize,
    /// Heads and sampling points of the pose-token sampler.
    pub pose_heads: usize,
    pub pose_points: usize,
    /// Std of the noise added to 2D reference points, in pixels.
    pub ref_noise_px: f64,
}

impl Default for LmConfig {
    fn default() -> Self {
        Self {
            layers: 4,
            heads: 4,
            model_dim: 256,
            ffn_dim: 1024,
            context_length: 1024,
            visual_channels: 16,
            pool_grid: 4,
            fusion_heads: 4,
            fusion_ffn_dim: 512,
            pose_heads: 4,
            pose_points: 4,
            ref_noise_px: 0.0,
        }
    }
}

impl LmConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::invalid(format!("language model config: {m}")));
        if self.layers == 0 || self.heads == 0 || self.model_dim == 0 || self.ffn_dim == 0 {
            return bad("layers, heads, model_dim and ffn_dim must be positive");
        }
        if !self.model_dim.is_multiple_of(self.heads) {
            return bad("model_dim must be divisible by heads");
        }
        if self.fusion_heads == 0 || !self.model_dim.is_multiple_of(self.fusion_heads) {
            return bad("model_dim must be divisible by fusion_heads");
        }
        if self.fusion_ffn_dim == 0 || self.pool_grid == 0 || self.context_length < 2 {
            return bad("fusion_ffn_dim, pool_grid and context_length must be positive");
        }
        if self.pose_heads == 0 || self.pose_points == 0 || !self.visual_channels.is_multiple_of(self.pose_heads) {
            return bad("visual_channels must be divisible by pose_heads and pose_points positive");
        }
        if !(self.ref_noise_px >= 0.0 && self.ref_noise_px.is_finite()) {
            return bad("ref_noise_px must be finite and non-negative");
        }
        Ok(())
    }

    /// Dimensions of the fusion block.
    pub fn maft_dims(&self) -> MaftDims {
        MaftDims {
            dim: self.model_dim,
            heads: self.fusion_heads,
            ffn: self.fusion_ffn_dim,
        }
    }
}

/// Size of a fusion block, usable for parameter arithmetic without building
/// one.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MaftDims {
    pub dim: usize,
    pub heads: usize,
    pub ffn: usize,
}

impl MaftDims {
    /// Query, key, value and output projections with biases, a two-layer
    /// feed-forward, and three layer norms.
    pub fn param_count(&self) -> usize {
        let d = self.dim;
        let attn = 4 * (d * d + d);
        let ffn = d * self.ffn + self.ffn + self.ffn * d + d;
        let norms = 3 * 2 * d;
        attn + ffn + norms
    }
}

/// Sampling weights of the three tasks in a training batch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TaskRatios {
    pub pe: f64,
    pub mp: f64,
    pub mib: f64,
}

impl Default for TaskRatios {
    fn default() -> Self {
        Self { pe: 1.0, mp: 1.0, mib: 1.0 }
    }
}

impl TaskRatios {
    /// Only `task` is trained.
    pub fn only(task: Task) -> Self {
        let mut r = Self { pe: 0.0, mp: 0.0, mib: 0.0 };
        *r.get_mut(task) = 1.0;
        r
    }

    /// Equal weight on the listed tasks.
    pub fn of(tasks: &[Task]) -> Self {
        let mut r = Self { pe: 0.0, mp: 0.0, mib: 0.0 };
        for &t in tasks {
            *r.get_mut(t) = 1.0;
        }
        r
    }

    pub fn get(&self, task: Task) -> f64 {
        match task {
            Task::Pe => self.pe,
            Task::Mp => self.mp,
            Task::Mib => self.mib,
        }
    }

    fn get_mut(&mut self, task: Task) -> &mut f64 {
        match task {
            Task::Pe => &mut self.pe,
            Task::Mp => &mut self.mp,
            Task::Mib => &mut self.mib,
        }
    }

    pub fn active(&self) -> Vec<Task> {
        Task::ALL.into_iter().filter(|t| self.get(*t) > 0.0).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.pe, self.mp, self.mib];
        if all.iter().any(|r| !(r.is_finite() && *r >= 0.0)) || all.iter().sum::<f64>() <= 0.0 {
            return Err(Error::invalid("task ratios must be non-negative with a positive sum"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LmTrainConfig {
    pub steps: usize,
    /// Samples per step.
    pub batch: usize,
    pub lr: f64,
    pub warmup_ratio: f64,
    pub weight_decay: f64,
    pub clip_norm: Option<f64>,
    pub ratios: TaskRatios,
    pub log_every: usize,
    pub seed: u64,
}

impl Default for LmTrainConfig {
    fn default() -> Self {
        Self {
            steps: 600,
            batch: 4,
            lr: 1e-3,
            warmup_ratio: 0.1,
            weight_decay: 0.0,
            clip_norm: Some(1.0),
            ratios: TaskRatios::default(),
            log_every: 25,
            seed: 0,
        }
    }
}

impl LmTrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::invalid(format!("language model training config: {m}")));
        if self.steps == 0 || self.batch == 0 || self.log_every == 0 {
            return bad("steps, batch and log_every must be positive");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if !(0.0..1.0).contains(&self.warmup_ratio) || self.weight_decay < 0.0 {
            return bad("warmup_ratio must lie in [0, 1) and weight_decay be non-negative");
        }
        if self.clip_norm.is_some_and(|c| !(c > 0.0)) {
            return bad("clip_norm must be positive");
        }
        self.ratios.validate()
    }
}

/// How tokens are chosen during generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecodeConfig {
    /// Mask logits to the serialization grammar.
    pub constrained: bool,
    /// `None` decodes greedily.
    pub temperature: Option<f64>,
    pub top_k: Option<usize>,
    pub seed: u64,
    /// Cap on generated tokens in unconstrained mode.
    pub max_new_tokens: Option<usize>,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            constrained: true,
            temperature: None,
            top_k: None,
            seed: 0,
            max_new_tokens: None,
        }
    }
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.temperature.is_some_and(|t| !(t > 0.0 && t.is_finite())) {
            return Err(Error::invalid("temperature must be positive"));
        }
        if self.top_k == Some(0) {
            return Err(Error::invalid("top_k must be positive"));
        }
        Ok(())
    }
}
