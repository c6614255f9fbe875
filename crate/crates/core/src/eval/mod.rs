//! Task evaluation and codebook diagnostics.

mod codebook;
mod tasks;

pub use codebook::{
    codebook_cosine_hist, codebook_usage, semantic_spheres, spheres_from_tokens, spheres_to_csv,
    CodebookUsageReport, CosineHistogram, SphereEntry, UsageBuckets, ACTIVE_RATE, FREQUENT_RATE,
};
pub use tasks::{
    eval_mib, eval_mp, eval_pe, mib_mid_window, EvalReport, FrozenPose, HorizonMode, LinearInterpolation, LmPredictor,
    MotionPredictor, Prediction, ReplayOracle, HORIZONS_MS,
};
