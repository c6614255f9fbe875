//! Pose sequences, joint layouts, camera preprocessing, pose metrics and
//! synthetic motion.

mod io;
mod layout;
mod metrics;
mod pose;
mod synth;

pub use io::{read_mskl, write_mskl, write_mskl_json, MsklFile, MsklHeader, MSKL_VERSION};
pub use layout::{JointGroup, JointLayout, GROUP_NAMES, H36M_JOINTS, H36M_PARENTS};
pub use metrics::{
    horizon_frames, mpjpe, n_mpjpe, n_mpjpe_with, per_frame_errors, within_clip_motion, ScaleScope,
};
pub use pose::{preprocess, CameraModel, CoordinateSpace, PoseSequence, Task, TaskSample};
pub use synth::{rest_bone_lengths, rest_pose, synth_dataset, synth_motion, SynthConfig, SYNTH_RATE_HZ};
