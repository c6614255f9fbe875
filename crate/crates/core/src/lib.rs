//! Discrete motion tokenization and autoregressive motion modeling.
//!
//! The crate is organised bottom-up:
//!
//! - [`skeleton`]: pose sequences, the 17-joint layout, camera preprocessing,
//!   MPJPE metrics, a synthetic gait generator and the MSKL file format.
//! - [`numerics`]: a small reverse-mode tape with the operators the models
//!   need, a finite-difference gradient checker, Adam and MTCK checkpoints.
//! - [`vgmt`]: the vision-guided motion tokenizer (dual-stream encoders,
//!   deformable visual-skeleton attention, hybrid paired codebook, decoder).
//! - [`motion_lm`]: vocabulary, token-grid serialization, prompt templates,
//!   a decoder-only transformer with visual fusion, training and constrained
//!   generation.
//! - [`eval`]: task metrics for estimation, prediction and in-betweening plus
//!   codebook diagnostics.

pub mod error;
pub mod eval;
pub mod motion_lm;
pub mod numerics;
pub mod skeleton;
pub mod vgmt;

pub use error::{Error, Result};
