#![allow(dead_code)]

use std::sync::Arc;

use motiontok::motion_lm::{LmConfig, MotionLm, Templates};
use motiontok::skeleton::{synth_dataset, JointLayout, SynthConfig};
use motiontok::vgmt::{Clip, Vgmt, VgmtConfig};

/// A small untrained tokenizer with fitted normalization.
pub fn tiny_vgmt(codes: usize, seed: u64) -> Vgmt {
    let cfg = VgmtConfig {
        codes,
        d_half: 8,
        heads: 2,
        points: 2,
        grid: 8,
        feature_channels: 4,
        ..VgmtConfig::default()
    };
    Vgmt::new(cfg, Arc::new(JointLayout::h36m()), seed).unwrap()
}

pub fn clips(vgmt: &mut Vgmt, count: usize, frames: usize, seed: u64) -> Vec<Clip> {
    let sc = SynthConfig { frames, ..SynthConfig::default() };
    let seqs = synth_dataset(&sc, count, seed).unwrap();
    let clips: Vec<Clip> = seqs.iter().map(|s| vgmt.prepare(s).unwrap()).collect();
    vgmt.fit_normalization(&clips).unwrap();
    let refs: Vec<&Clip> = clips.iter().collect();
    vgmt.init_codebook_from_data(&refs, seed).unwrap();
    clips
}

pub fn tiny_lm_config(layers: usize) -> LmConfig {
    LmConfig {
        layers,
        heads: 2,
        model_dim: 8,
        ffn_dim: 16,
        context_length: 512,
        visual_channels: 4,
        pool_grid: 2,
        fusion_heads: 2,
        fusion_ffn_dim: 12,
        pose_heads: 2,
        pose_points: 2,
        ref_noise_px: 0.0,
    }
}

pub fn tiny_lm(codes: usize, layers: usize, seed: u64) -> MotionLm {
    MotionLm::new(tiny_lm_config(layers), codes, Templates::default(), seed).unwrap()
}
